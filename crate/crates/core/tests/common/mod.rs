//! Synthetic trace generation shared by the integration and acceptance tests.
//!
//! A scenario lists module imports (who imports whom, from which line, and
//! each module's self time) and how many EXEC samples land in each module.
//! Every invocation repeats the same imports; INIT samples are spread over
//! modules in proportion to self time, and all samples are shuffled across
//! invocations with a fixed seed.

#![allow(dead_code)]

pub mod random;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use coldprof::package_mapper::{RootConfig, RootKind};
use coldprof::trace_model::{
    encode_trace, write_trace, CallPath, Frame, ImportRecord, InvocationMeta, InvocationTrace, Phase, SampleRecord,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const APP_DIR: &str = "/var/task";
pub const LIB_DIR: &str = "/opt/python";
pub const STDLIB_DIR: &str = "/var/lang/lib/python3.11";
pub const ROOTS_FILE: &str = "roots.toml";
pub const INIT_SLACK_US: u64 = 10_000;

pub fn roots() -> RootConfig {
    RootConfig::new([
        (APP_DIR, RootKind::App),
        (LIB_DIR, RootKind::Library),
        (STDLIB_DIR, RootKind::Stdlib),
    ])
}

pub fn roots_toml() -> String {
    format!(
        "[[roots]]\npath = \"{APP_DIR}\"\nkind = \"app\"\n\n\
         [[roots]]\npath = \"{LIB_DIR}\"\nkind = \"library\"\n\n\
         [[roots]]\npath = \"{STDLIB_DIR}\"\nkind = \"stdlib\"\n"
    )
}

#[derive(Debug, Clone)]
pub struct Module {
    pub name: String,
    pub file: String,
    pub importer: Option<usize>,
    /// Line in the importer that runs the import; defaults to the importer's `init_line`.
    pub site_line: Option<u32>,
    /// Line in this module where INIT samples land.
    pub init_line: u32,
    pub self_us: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub app_id: String,
    pub manifest: String,
    pub handler_file: String,
    pub invocations: usize,
    pub period_us: u64,
    pub exec_us: u64,
    pub seed: u64,
    pub modules: Vec<Module>,
    /// (module index, EXEC sample count over all invocations)
    pub exec: Vec<(usize, u64)>,
}

impl Scenario {
    /// New scenario whose handler module is imported first, at `handler` under the app root.
    pub fn new(app_id: &str, handler: &str, handler_self_us: u64) -> Self {
        let handler_file = format!("{APP_DIR}/{handler}");
        let name = handler.trim_end_matches(".py").to_string();
        Self {
            app_id: app_id.into(),
            manifest: format!("sha256:{app_id}-v1"),
            handler_file: handler_file.clone(),
            invocations: 100,
            period_us: 50_000,
            exec_us: 5_000_000,
            seed: 42,
            modules: vec![Module {
                name,
                file: handler_file,
                importer: None,
                site_line: None,
                init_line: 1,
                self_us: handler_self_us,
            }],
            exec: Vec::new(),
        }
    }

    pub fn index(&self, name: &str) -> usize {
        self.modules
            .iter()
            .position(|m| m.name == name)
            .unwrap_or_else(|| panic!("no module {name}"))
    }

    fn add(&mut self, name: &str, file: String, importer: &str, site: Option<u32>, init_line: u32, self_us: u64) -> &mut Self {
        let importer = self.index(importer);
        self.modules.push(Module {
            name: name.into(),
            file,
            importer: Some(importer),
            site_line: site,
            init_line,
            self_us,
        });
        self
    }

    /// Library module at `rel` under the library root.
    pub fn lib(&mut self, name: &str, rel: &str, importer: &str, site: Option<u32>, init_line: u32, self_us: u64) -> &mut Self {
        self.add(name, format!("{LIB_DIR}/{rel}"), importer, site, init_line, self_us)
    }

    pub fn stdlib(&mut self, name: &str, rel: &str, importer: &str, site: u32, self_us: u64) -> &mut Self {
        self.add(name, format!("{STDLIB_DIR}/{rel}"), importer, Some(site), 1, self_us)
    }

    pub fn uses(&mut self, name: &str, count: u64) -> &mut Self {
        let idx = self.index(name);
        self.exec.push((idx, count));
        self
    }

    fn cumulative(&self) -> Vec<u64> {
        let mut cum: Vec<u64> = self.modules.iter().map(|m| m.self_us).collect();
        for i in (0..self.modules.len()).rev() {
            if let Some(p) = self.modules[i].importer {
                cum[p] += cum[i];
            }
        }
        cum
    }

    pub fn init_end_us(&self) -> u64 {
        let cum = self.cumulative();
        self.modules
            .iter()
            .zip(&cum)
            .filter(|(m, _)| m.importer.is_none())
            .map(|(_, c)| c)
            .sum::<u64>()
            + INIT_SLACK_US
    }

    fn import_chain(&self, idx: usize) -> Vec<Frame> {
        let m = &self.modules[idx];
        match m.importer {
            None => Vec::new(),
            Some(p) => {
                let mut chain = self.import_chain(p);
                let importer = &self.modules[p];
                chain.push(Frame::new(
                    importer.file.clone(),
                    m.site_line.unwrap_or(importer.init_line),
                    "<module>",
                ));
                chain
            }
        }
    }

    /// Stack of an INIT sample taken while `idx` runs its top-level code.
    pub fn init_stack(&self, idx: usize) -> CallPath {
        let m = &self.modules[idx];
        let mut frames = self.import_chain(idx);
        frames.push(Frame::new(m.file.clone(), m.init_line, "<module>"));
        CallPath::new(frames)
    }

    /// Stack of an EXEC sample attributed to `idx`.
    pub fn exec_stack(&self, idx: usize) -> CallPath {
        let handler = Frame::new(self.handler_file.clone(), 30, "handler");
        let m = &self.modules[idx];
        let leaf = if m.file == self.handler_file {
            Frame::new(m.file.clone(), 40, "compute")
        } else {
            Frame::new(m.file.clone(), 100, "work")
        };
        CallPath::new(vec![handler, leaf])
    }

    pub fn init_sample_count(&self, idx: usize) -> u64 {
        let total = self.modules[idx].self_us * self.invocations as u64;
        (total + self.period_us / 2) / self.period_us
    }

    pub fn exec_total(&self) -> u64 {
        self.exec.iter().map(|(_, c)| c).sum()
    }

    pub fn generate(&self) -> Vec<InvocationTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut init: Vec<usize> = Vec::new();
        for idx in 0..self.modules.len() {
            init.extend(std::iter::repeat_n(idx, self.init_sample_count(idx) as usize));
        }
        let mut exec: Vec<usize> = Vec::new();
        for &(idx, count) in &self.exec {
            exec.extend(std::iter::repeat_n(idx, count as usize));
        }
        init.shuffle(&mut rng);
        exec.shuffle(&mut rng);

        let cum = self.cumulative();
        let imports: Vec<ImportRecord> = self
            .modules
            .iter()
            .enumerate()
            .map(|(i, m)| ImportRecord {
                module_name: m.name.clone(),
                file_path: m.file.clone(),
                parent_module: m.importer.map(|p| self.modules[p].name.clone()).unwrap_or_default(),
                t_cumulative_us: cum[i],
                t_self_us: m.self_us,
                order: i as u64 + 1,
            })
            .collect();
        let init_end = self.init_end_us();
        let exec_end = init_end + self.exec_us;
        let n = self.invocations;
        let chunk = |v: &[usize], k: usize| v[k * v.len() / n..(k + 1) * v.len() / n].to_vec();

        (0..n)
            .map(|k| {
                let init_part = chunk(&init, k);
                let exec_part = chunk(&exec, k);
                let mut samples = Vec::with_capacity(init_part.len() + exec_part.len());
                let spacing = init_end / (init_part.len() as u64 + 1);
                for (j, &idx) in init_part.iter().enumerate() {
                    samples.push(SampleRecord {
                        timestamp_us: (j as u64 + 1) * spacing,
                        call_path: self.init_stack(idx),
                        phase: Phase::Init,
                    });
                }
                let spacing = self.exec_us / (exec_part.len() as u64 + 1);
                for (j, &idx) in exec_part.iter().enumerate() {
                    samples.push(SampleRecord {
                        timestamp_us: init_end + (j as u64 + 1) * spacing,
                        call_path: self.exec_stack(idx),
                        phase: Phase::Exec,
                    });
                }
                InvocationTrace {
                    meta: InvocationMeta {
                        invocation_id: format!("inv-{k:04}"),
                        app_id: self.app_id.clone(),
                        code_manifest_hash: self.manifest.clone(),
                        sample_period_us: self.period_us,
                        init_end_us: init_end,
                        exec_end_us: exec_end,
                        agent_version: "0.1.0".into(),
                        dropped_samples: 0,
                    },
                    imports: imports.clone(),
                    samples,
                }
            })
            .collect()
    }

    /// Expected per-invocation self time of every library module, keyed by dotted name.
    pub fn library_self_times(&self) -> BTreeMap<String, u64> {
        self.modules
            .iter()
            .filter(|m| m.file.starts_with(LIB_DIR))
            .map(|m| (m.name.clone(), m.self_us))
            .collect()
    }
}

/// CVE binary analyzer: xmlschema is pulled in through the SBOM validator and rarely used.
pub fn cve_binary_analyzer() -> Scenario {
    let mut s = Scenario::new("cve_binary_analyzer", "handler.py", 20_000);
    s.stdlib("json", "json/__init__.py", "handler", 1, 5_000)
        .lib("cve_bin_tool", "cve_bin_tool/__init__.py", "handler", Some(11), 5, 100_000)
        .lib("cve_bin_tool.cli", "cve_bin_tool/cli.py", "handler", Some(11), 71, 160_000)
        .lib("cve_bin_tool.sbom_detection", "cve_bin_tool/sbom_detection.py", "cve_bin_tool.cli", None, 8, 40_000)
        .lib("cve_bin_tool.validator", "cve_bin_tool/validator.py", "cve_bin_tool.sbom_detection", None, 11, 20_000)
        .lib("xmlschema", "xmlschema/__init__.py", "cve_bin_tool.validator", None, 21, 30_000)
        .lib("xmlschema.validators", "xmlschema/validators/__init__.py", "xmlschema", None, 30, 52_700)
        .lib("elementpath", "elementpath/__init__.py", "xmlschema.validators", None, 15, 40_000)
        .lib("elementpath.xpath2", "elementpath/xpath2/__init__.py", "elementpath", None, 9, 41_700)
        .lib("cve_bin_tool.checkers", "cve_bin_tool/checkers/__init__.py", "cve_bin_tool.cli", Some(40), 12, 180_000)
        .lib("requests", "requests/__init__.py", "handler", Some(3), 43, 120_000)
        .lib("requests.adapters", "requests/adapters.py", "requests", None, 16, 80_000)
        .lib("rich", "rich/__init__.py", "cve_bin_tool.cli", Some(20), 7, 135_600);
    s.uses("xmlschema.validators", 50)
        .uses("xmlschema", 28)
        .uses("elementpath", 100)
        .uses("elementpath.xpath2", 48)
        .uses("cve_bin_tool.cli", 3_000)
        .uses("cve_bin_tool.checkers", 2_500)
        .uses("cve_bin_tool", 400)
        .uses("cve_bin_tool.sbom_detection", 60)
        .uses("cve_bin_tool.validator", 40)
        .uses("requests", 700)
        .uses("requests.adapters", 500)
        .uses("rich", 100)
        .uses("handler", 1_500)
        .uses("json", 974);
    s
}

/// DNA visualization: numpy dominates initialization but is lightly used.
pub fn dna_visualization() -> Scenario {
    let mut s = Scenario::new("rainbowcake_dna_visualization", "handler.py", 20_000);
    s.stdlib("json", "json/__init__.py", "handler", 1, 5_000)
        .lib("squiggle", "squiggle/__init__.py", "handler", Some(8), 1, 10_000)
        .lib("squiggle.squiggle", "squiggle/squiggle.py", "squiggle", None, 1, 20_000)
        .lib("numpy", "numpy/__init__.py", "squiggle.squiggle", None, 114, 100_000)
        .lib("numpy.core", "numpy/core/__init__.py", "numpy", None, 24, 400_000)
        .lib("numpy.linalg", "numpy/linalg/__init__.py", "numpy", None, 73, 80_000)
        .lib("numpy.random", "numpy/random/__init__.py", "numpy", None, 180, 52_700)
        .lib("bokeh", "bokeh/__init__.py", "handler", Some(4), 90, 236_600)
        .lib("urllib3", "urllib3/__init__.py", "handler", Some(5), 13, 100_700);
    s.uses("numpy.core", 200)
        .uses("numpy.linalg", 40)
        .uses("numpy.random", 20)
        .uses("urllib3", 29)
        .uses("bokeh", 4_000)
        .uses("handler", 5_000)
        .uses("json", 711);
    s
}

/// Sentiment analysis: several nltk sub-packages are imported and never used.
pub fn sentiment_analysis() -> Scenario {
    let mut s = Scenario::new("rainbowcake_sentiment_analysis", "handler.py", 20_000);
    s.stdlib("json", "json/__init__.py", "handler", 1, 5_000)
        .lib("nltk", "nltk/__init__.py", "handler", Some(2), 147, 149_300)
        .lib("nltk.tokenize", "nltk/tokenize/__init__.py", "nltk", None, 64, 120_000)
        .lib("nltk.corpus", "nltk/corpus/__init__.py", "nltk", None, 66, 140_000)
        .lib("nltk.chunk", "nltk/chunk/__init__.py", "nltk", None, 155, 30_000)
        .lib("nltk.chunk.named_entity", "nltk/chunk/named_entity.py", "nltk.chunk", None, 18, 10_000)
        .lib("nltk.sem", "nltk/sem/__init__.py", "nltk.chunk.named_entity", None, 44, 82_500)
        .lib("nltk.stem", "nltk/stem/__init__.py", "nltk", None, 31, 56_000)
        .lib("nltk.parse", "nltk/parse/__init__.py", "nltk", None, 100, 60_500)
        .lib("nltk.tag", "nltk/tag/__init__.py", "nltk", None, 70, 51_000)
        .lib("textblob", "textblob/__init__.py", "handler", Some(3), 9, 200_000)
        .lib("regex", "regex/__init__.py", "textblob", None, 1, 100_700);
    s.uses("nltk.tokenize", 300)
        .uses("nltk.corpus", 150)
        .uses("nltk", 50)
        .uses("nltk.chunk", 33)
        .uses("textblob", 3_000)
        .uses("regex", 800)
        .uses("handler", 4_000)
        .uses("json", 1_667);
    s
}

/// Model training: scipy.stats is reached through sklearn and never used.
pub fn model_training() -> Scenario {
    let mut s = Scenario::new("faasworkbench_model_training", "lambda_function.py", 20_000);
    s.stdlib("json", "json/__init__.py", "lambda_function", 1, 5_000)
        .lib("sklearn", "sklearn/__init__.py", "lambda_function", Some(5), 87, 100_000)
        .lib("sklearn.base", "sklearn/base.py", "sklearn", None, 17, 50_000)
        .lib("sklearn.utils", "sklearn/utils/__init__.py", "sklearn.base", None, 20, 80_000)
        .lib("scipy", "scipy/__init__.py", "sklearn.utils", None, 130, 50_000)
        .lib("scipy.sparse", "scipy/sparse/__init__.py", "scipy", None, 280, 120_000)
        .lib("scipy.linalg", "scipy/linalg/__init__.py", "scipy", None, 195, 76_700)
        .lib("scipy.stats", "scipy/stats/__init__.py", "sklearn.utils", None, 605, 132_500)
        .lib("sklearn.linear_model", "sklearn/linear_model/__init__.py", "sklearn", Some(88), 12, 170_000)
        .lib("pandas", "pandas/__init__.py", "lambda_function", Some(3), 48, 220_800);
    s.uses("scipy.sparse", 400)
        .uses("scipy.linalg", 150)
        .uses("scipy", 44)
        .uses("sklearn.linear_model", 3_000)
        .uses("sklearn.utils", 500)
        .uses("sklearn.base", 300)
        .uses("sklearn", 200)
        .uses("pandas", 2_000)
        .uses("lambda_function", 2_000)
        .uses("json", 1_406);
    s
}

pub fn table_scenarios() -> Vec<Scenario> {
    vec![
        cve_binary_analyzer(),
        dna_visualization(),
        sentiment_analysis(),
        model_training(),
    ]
}

/// One-library app whose mean library init over mean exec equals `lib_us / exec_us`.
pub fn gate_scenario(app_id: &str, lib_us: u64, exec_us: u64) -> Scenario {
    let mut s = Scenario::new(app_id, "handler.py", 2_000);
    s.invocations = 3;
    s.period_us = 10_000;
    s.exec_us = exec_us;
    s.lib("heavylib", "heavylib/__init__.py", "handler", Some(1), 1, lib_us);
    s.uses("heavylib", 30).uses("handler", 30);
    s
}

pub fn gate_scenarios() -> Vec<(&'static str, Scenario)> {
    vec![
        ("gate_above", gate_scenario("gate_above", 700_000, 1_000_000)),
        ("gate_below", gate_scenario("gate_below", 50_000, 1_000_000)),
        ("gate_at", gate_scenario("gate_at", 100_000, 1_000_000)),
    ]
}

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn write_scenario(dir: &Path, s: &Scenario) {
    fs::create_dir_all(dir).unwrap();
    for t in s.generate() {
        write_trace(dir, &t).unwrap();
    }
    fs::write(dir.join(ROOTS_FILE), roots_toml()).unwrap();
}

/// Every checked-in fixture directory with its generator.
pub fn all_fixtures() -> Vec<(String, Scenario)> {
    let mut v: Vec<(String, Scenario)> = table_scenarios().into_iter().map(|s| (s.app_id.clone(), s)).collect();
    v.extend(gate_scenarios().into_iter().map(|(n, s)| (n.to_string(), s)));
    v
}

/// Differences between the generator and the files on disk, empty when current.
pub fn stale_fixture_files(dir: &Path, s: &Scenario) -> Vec<String> {
    let mut stale = Vec::new();
    for t in s.generate() {
        let path = dir.join(t.file_name());
        let expected = encode_trace(&t).unwrap();
        if fs::read_to_string(&path).ok().as_deref() != Some(expected.as_str()) {
            stale.push(path.display().to_string());
        }
    }
    if fs::read_to_string(dir.join(ROOTS_FILE)).ok() != Some(roots_toml()) {
        stale.push(dir.join(ROOTS_FILE).display().to_string());
    }
    stale
}

//! Drives every frame's QA graph against a backend and scores the result.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use gvqa_core::detection::{render_detection_context, DetectionRecord};
use gvqa_core::diag::Diagnostic;
use gvqa_core::graph::{build_graph_with, ContextStrategy, EdgeList, GraphError, SharedObjectRule};
use gvqa_core::inference::{InferenceRequest, StubMode};
use gvqa_core::metrics::WeightError;
use gvqa_core::model::{split_every, ClosedAnswerRule, KeyFrame, Scene};
use gvqa_core::preset::VersionPreset;
use gvqa_core::prompt::{assemble_context, build_prompt, PromptError, PromptStyle, RewriteRules};
use gvqa_core::report::{evaluate, EvalReport, PredictionRecord, RunEcho, ScoringConfig};
use gvqa_core::UNANSWERED;

use crate::backend::{Backend, HttpTransport, RemoteBackend, RetryPolicy, StubBackend};
use crate::dataset::{frames, parse_dataset_with, DatasetError};
use crate::detections::{load_detections, DetectionMap};
use crate::io::{write_atomic, write_json_atomic};
use crate::predictions::write_predictions;
use crate::report_io::report_csv;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::All => "all",
        }
    }

    /// Scenes at positions `offset, offset + 6, ...` are the validation split.
    pub fn apply(self, scenes: Vec<Scene>, offset: usize) -> Vec<Scene> {
        match self {
            Split::All => scenes,
            Split::Train => split_every(scenes, 6, offset).0,
            Split::Val => split_every(scenes, 6, offset).1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Remote {
        url: String,
        retry: RetryPolicy,
        header: Option<(String, String)>,
    },
    Stub(StubMode),
}

impl BackendSpec {
    pub fn describe(&self) -> String {
        match self {
            BackendSpec::Remote { url, .. } => format!("remote:{url}"),
            BackendSpec::Stub(m) => format!("stub:{m}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub split: Split,
    pub val_offset: usize,
    pub preset: Option<VersionPreset>,
    pub strategy: ContextStrategy,
    pub style: PromptStyle,
    pub backend: BackendSpec,
    pub detections: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub rules: RewriteRules,
    pub closed_rule: ClosedAnswerRule,
    pub scoring: ScoringConfig,
    pub seed: Option<u64>,
    pub parallelism: usize,
    pub timeout: Duration,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, backend: BackendSpec) -> Self {
        Self {
            dataset: dataset.into(),
            split: Split::All,
            val_offset: 0,
            preset: None,
            strategy: ContextStrategy::BaselineNone,
            style: PromptStyle::default(),
            backend,
            detections: None,
            edges: None,
            rules: RewriteRules::default(),
            closed_rule: ClosedAnswerRule::default(),
            scoring: ScoringConfig::default(),
            seed: None,
            parallelism: 1,
            timeout: Duration::from_secs(60),
            out: None,
        }
    }

    pub fn with_preset(mut self, preset: VersionPreset) -> Self {
        let f = preset.fragment();
        self.preset = Some(preset);
        self.strategy = f.strategy;
        self.style = f.style;
        self
    }

    pub fn check(&self) -> Result<(), RunError> {
        if self.style.include_detections && self.detections.is_none() {
            return Err(RunError::Config(
                "detection context is enabled but no detections file was given".into(),
            ));
        }
        if let BackendSpec::Stub(StubMode::Corrupt { seed, .. }) = &self.backend {
            if self.seed != Some(*seed) {
                return Err(RunError::Config("the corrupting stub needs an explicit seed".into()));
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> RunEcho {
        RunEcho {
            preset: self.preset.map(|p| p.name().to_string()),
            strategy: Some(self.strategy),
            style: Some(self.style),
            split: Some(self.split.name().to_string()),
            backend: Some(self.backend.describe()),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("frame `{frame}`: {source}")]
    Graph { frame: String, source: GraphError },
    #[error("frame `{frame}`: {source}")]
    Prompt { frame: String, source: PromptError },
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: anyhow::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Exit code for the CLI: every run error is an input/config problem.
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Replacement GOT edges for specific frames.
pub type EdgeOverrides = BTreeMap<String, Vec<(usize, usize)>>;

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEdge {
    Triple(String, usize, usize),
    Object {
        frame_id: String,
        source: usize,
        target: usize,
    },
}

/// Reads a JSON list of `[frame_id, source, target]` triples (or objects
/// with those keys).
pub fn load_edge_overrides(text: &str) -> anyhow::Result<EdgeOverrides> {
    let raw: Vec<RawEdge> = serde_json::from_str(text)?;
    let mut out = EdgeOverrides::new();
    for e in raw {
        let (f, s, t) = match e {
            RawEdge::Triple(f, s, t) => (f, s, t),
            RawEdge::Object {
                frame_id,
                source,
                target,
            } => (frame_id, source, target),
        };
        out.entry(f).or_default().push((s, t));
    }
    Ok(out)
}

/// Everything `run_frames` needs besides the frames and the backend.
pub struct Plan<'a> {
    pub strategy: ContextStrategy,
    pub style: PromptStyle,
    pub rules: &'a RewriteRules,
    pub detections: &'a DetectionMap,
    pub edges: &'a EdgeOverrides,
    pub parallelism: usize,
    pub timeout: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct FrameRun {
    pub records: Vec<PredictionRecord>,
    /// `(node_id, full prompt)` in dataset order.
    pub prompts: Vec<(String, String)>,
    pub failures: Vec<NodeFailure>,
    pub diagnostics: Vec<Diagnostic>,
}

fn run_frame(frame: &KeyFrame, plan: &Plan<'_>, backend: &dyn Backend) -> Result<FrameRun, RunError> {
    let mut out = FrameRun::default();
    if frame.qa_list.is_empty() {
        out.diagnostics.push(Diagnostic::warning(
            "empty-qa",
            &frame.frame_id,
            "frame skipped: no QA pairs",
        ));
        return Ok(out);
    }
    let graph_err = |source| RunError::Graph {
        frame: frame.frame_id.clone(),
        source,
    };
    let graph = match plan.edges.get(&frame.frame_id) {
        Some(list) => build_graph_with(frame, plan.strategy, &EdgeList(list.clone())),
        None => build_graph_with(frame, plan.strategy, &SharedObjectRule),
    }
    .map_err(graph_err)?;
    let waves = graph.waves().map_err(graph_err)?;

    let no_detections: Vec<DetectionRecord> = Vec::new();
    let detection_context = render_detection_context(plan.detections.get(&frame.frame_id).unwrap_or(&no_detections));

    let mut answers: BTreeMap<String, String> = BTreeMap::new();
    let mut prompts: BTreeMap<usize, String> = BTreeMap::new();
    for wave in waves {
        let mut requests = Vec::with_capacity(wave.len());
        for &i in &wave {
            let node = &frame.qa_list[i];
            let ctx = assemble_context(node, &graph, frame, &answers, &plan.style, plan.rules).map_err(|source| {
                RunError::Prompt {
                    frame: frame.frame_id.clone(),
                    source,
                }
            })?;
            for d in ctx.diagnostics {
                if !out.diagnostics.contains(&d) {
                    out.diagnostics.push(d);
                }
            }
            let prompt = build_prompt(&ctx.text, &node.question, &plan.style, &detection_context);
            prompts.insert(i, prompt.full_text.clone());
            requests.push((
                i,
                InferenceRequest {
                    frame_id: frame.frame_id.clone(),
                    node_id: node.node_id.clone(),
                    prompt: prompt.full_text,
                    image_refs: frame.camera_images.clone(),
                    timeout: plan.timeout,
                    attempt: 0,
                },
            ));
        }

        let results: Vec<(usize, Result<String, String>)> = if plan.parallelism > 1 && requests.len() > 1 {
            thread::scope(|s| {
                let handles: Vec<_> = requests
                    .iter()
                    .map(|(i, req)| {
                        let node = &frame.qa_list[*i];
                        s.spawn(move || {
                            (
                                *i,
                                backend.query(req, node).map(|r| r.answer).map_err(|e| e.to_string()),
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("backend query panicked"))
                    .collect()
            })
        } else {
            requests
                .iter()
                .map(|(i, req)| {
                    let node = &frame.qa_list[*i];
                    (
                        *i,
                        backend.query(req, node).map(|r| r.answer).map_err(|e| e.to_string()),
                    )
                })
                .collect()
        };

        for (i, result) in results {
            let node = &frame.qa_list[i];
            let answer = result.unwrap_or_else(|error| {
                out.failures.push(NodeFailure {
                    node_id: node.node_id.clone(),
                    error,
                });
                UNANSWERED.to_string()
            });
            answers.insert(node.node_id.clone(), answer);
        }
    }

    for node in &frame.qa_list {
        out.records.push(PredictionRecord {
            frame_id: frame.frame_id.clone(),
            node_id: node.node_id.clone(),
            question: node.question.clone(),
            answer: answers[&node.node_id].clone(),
            gt_answer: node.gt_answer.clone(),
            stage: node.stage,
            answer_form: node.answer_form,
        });
        out.prompts
            .push((node.node_id.clone(), prompts.remove(&node.index).unwrap_or_default()));
    }
    out.failures.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    Ok(out)
}

/// Runs all frames, up to `plan.parallelism` at a time. Results come back in
/// input order whatever the schedule.
pub fn run_frames(frames: &[&KeyFrame], plan: &Plan<'_>, backend: &dyn Backend) -> Result<Vec<FrameRun>, RunError> {
    let workers = plan.parallelism.clamp(1, frames.len().max(1));
    if workers == 1 {
        return frames.iter().map(|f| run_frame(f, plan, backend)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<FrameRun, RunError>>>> = Mutex::new((0..frames.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(frame) = frames.get(i) else { break };
                let r = run_frame(frame, plan, backend);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every frame slot is filled"))
        .collect()
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<PredictionRecord>,
    pub prompts: Vec<(String, String)>,
    pub failures: Vec<NodeFailure>,
    pub diagnostics: Vec<Diagnostic>,
    pub report: EvalReport,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Settings `eval` needs to reproduce a run's report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: RunEcho,
    pub scoring: ScoringConfig,
}

pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "run_config.json";
pub const PROMPTS_FILE: &str = "prompts.txt";

fn read_input(path: &Path) -> Result<fs::File, RunError> {
    fs::File::open(path).map_err(|e| RunError::Input {
        path: path.into(),
        source: e.into(),
    })
}

pub fn make_backend(config: &RunConfig) -> anyhow::Result<Box<dyn Backend>> {
    Ok(match &config.backend {
        BackendSpec::Stub(mode) => Box::new(StubBackend { mode: mode.clone() }),
        BackendSpec::Remote { url, retry, header } => Box::new(RemoteBackend::new(
            url.clone(),
            HttpTransport::new(header.clone())?,
            retry.clone(),
            config.parallelism,
        )),
    })
}

pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    let backend = make_backend(config).map_err(|e| RunError::Config(e.to_string()))?;
    run_with_backend(config, backend.as_ref())
}

pub fn run_with_backend(config: &RunConfig, backend: &dyn Backend) -> Result<RunOutput, RunError> {
    config.check()?;
    let scenes = parse_dataset_with(read_input(&config.dataset)?, &config.closed_rule)?;
    let scenes = config.split.apply(scenes, config.val_offset);

    let mut diagnostics = Vec::new();
    let detections = match &config.detections {
        Some(p) => {
            let (map, diags) = load_detections(read_input(p)?).map_err(|e| RunError::Input {
                path: p.clone(),
                source: e,
            })?;
            diagnostics.extend(diags);
            map
        }
        None => DetectionMap::new(),
    };
    let edges = match &config.edges {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            load_edge_overrides(&text).map_err(|e| RunError::Input {
                path: p.clone(),
                source: e,
            })?
        }
        None => EdgeOverrides::new(),
    };

    let plan = Plan {
        strategy: config.strategy,
        style: config.style,
        rules: &config.rules,
        detections: &detections,
        edges: &edges,
        parallelism: config.parallelism.max(1),
        timeout: config.timeout,
    };
    let frame_list: Vec<&KeyFrame> = frames(&scenes).collect();
    let runs = run_frames(&frame_list, &plan, backend)?;

    let mut records = Vec::new();
    let mut prompts = Vec::new();
    let mut failures = Vec::new();
    for r in runs {
        records.extend(r.records);
        prompts.extend(r.prompts);
        failures.extend(r.failures);
        diagnostics.extend(r.diagnostics);
    }
    let report = evaluate(&records, &config.scoring, config.echo(), None)?;
    let output = RunOutput {
        records,
        prompts,
        failures,
        diagnostics,
        report,
    };
    if let Some(dir) = &config.out {
        write_run_outputs(dir, config, &output)?;
    }
    Ok(output)
}

pub fn prompts_text(prompts: &[(String, String)]) -> String {
    let mut s = String::new();
    for (id, text) in prompts {
        s.push_str("=== ");
        s.push_str(id);
        s.push_str(" ===\n");
        s.push_str(text);
        s.push('\n');
    }
    s
}

pub fn write_run_outputs(dir: &Path, config: &RunConfig, output: &RunOutput) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    let mut preds = Vec::new();
    write_predictions(&mut preds, &output.records)?;
    write_atomic(&dir.join(PREDICTIONS_FILE), &preds)?;
    write_json_atomic(&dir.join(REPORT_FILE), &output.report)?;
    write_atomic(&dir.join(REPORT_CSV_FILE), report_csv(&output.report).as_bytes())?;
    write_json_atomic(
        &dir.join(MANIFEST_FILE),
        &RunManifest {
            run: config.echo(),
            scoring: config.scoring.clone(),
        },
    )?;
    write_atomic(&dir.join(PROMPTS_FILE), prompts_text(&output.prompts).as_bytes())?;
    if !output.failures.is_empty() {
        let mut buf = Vec::new();
        serde_json::to_writer_pretty(&mut buf, &output.failures).map_err(std::io::Error::other)?;
        buf.write_all(b"\n")?;
        write_atomic(&dir.join("failures.json"), &buf)?;
    }
    Ok(())
}

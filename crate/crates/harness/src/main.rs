use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use gvqa_core::detection::MatchMode;
use gvqa_core::diag::Severity;
use gvqa_core::graph::{build_graph_with, ContextStrategy, EdgeList, SharedObjectRule};
use gvqa_core::inference::StubMode;
use gvqa_core::model::validate_frame;
use gvqa_core::preset::VersionPreset;
use gvqa_core::prompt::ContextForm;
use gvqa_core::report::{evaluate, EvalReport, ScoringConfig};

use gvqa_harness::backend::RetryPolicy;
use gvqa_harness::config::{load_rules, parse_weights, FileConfig};
use gvqa_harness::dataset::{frames, parse_dataset};
use gvqa_harness::io::{write_atomic, write_json_atomic};
use gvqa_harness::predictions::{read_predictions, resolve_predictions};
use gvqa_harness::report_io::{render_table, report_csv};
use gvqa_harness::runner::{
    load_edge_overrides, run, BackendSpec, RunConfig, RunManifest, Split, REPORT_CSV_FILE, REPORT_FILE,
};

#[derive(Parser)]
#[command(name = "gvqa", version, about = "Graph-VQA run and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every frame's QA graph against a backend, then score it.
    Run(RunArgs),
    /// Score a persisted predictions file.
    Eval(EvalArgs),
    /// Check a dataset file and print diagnostics.
    Validate(ValidateArgs),
    /// Print what a version preset expands to.
    Preset {
        #[arg(long, value_name = "VERSION")]
        show: String,
    },
}

#[derive(Args)]
struct ScoringArgs {
    /// Box-center match radius in pixels.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, value_parser = parse_match_mode)]
    match_mode: Option<MatchMode>,
    /// `name=w,...` or a JSON file mapping component names to weights.
    #[arg(long)]
    weights: Option<String>,
    /// Also print a score table.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
    /// Position of the first validation scene within each block of six.
    #[arg(long, default_value_t = 0)]
    val_offset: usize,
    /// BASELINE or A-E; explicit --strategy/--style flags take precedence.
    #[arg(long)]
    preset: Option<VersionPreset>,
    #[arg(long)]
    strategy: Option<ContextStrategy>,
    /// `raw_qa` or `declarative`.
    #[arg(long)]
    style: Option<ContextForm>,
    #[arg(long)]
    format_instruction: Option<bool>,
    /// Fix the known typo in the format instruction.
    #[arg(long)]
    correct_instruction: bool,
    #[arg(long)]
    include_detections: Option<bool>,
    /// Remote endpoint URL.
    #[arg(long, env = "GVQA_BACKEND_URL", conflicts_with = "stub")]
    backend: Option<String>,
    /// `echo`, `fixed:<text>` or `corrupt:<p>`.
    #[arg(long)]
    stub: Option<String>,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// JSON list of `[frame_id, source, target]` replacing GOT edges.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Rewrite rules (JSON or TOML).
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    retries: Option<u32>,
    /// TOML file with `[backend]` and `[scoring]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// The run_config.json written next to the predictions; restores the
    /// run's scoring settings and echo.
    #[arg(long)]
    run_config: Option<PathBuf>,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Directory for report.json and report.csv; stdout only if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    edges: Option<PathBuf>,
}

fn parse_match_mode(s: &str) -> Result<MatchMode, String> {
    match s {
        "greedy" => Ok(MatchMode::Greedy),
        "optimal" => Ok(MatchMode::Optimal),
        _ => Err(format!("unknown match mode `{s}` (greedy, optimal)")),
    }
}

fn apply_scoring(scoring: &mut ScoringConfig, args: &ScoringArgs) -> anyhow::Result<()> {
    if let Some(r) = args.radius {
        if !(r.is_finite() && r >= 0.0) {
            bail!("radius must be a non-negative number");
        }
        scoring.radius = r;
    }
    if let Some(m) = args.match_mode {
        scoring.match_mode = m;
    }
    if let Some(w) = &args.weights {
        scoring.weights = Some(parse_weights(w)?);
    }
    Ok(())
}

fn build_run_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let backend = match (&args.stub, &args.backend, &file.backend.url) {
        (Some(s), _, _) => {
            let mut mode: StubMode = s.parse().map_err(|e| anyhow::anyhow!("--stub: {e}"))?;
            if let StubMode::Corrupt { rate, .. } = mode {
                let explicit = s.split(':').count() > 2;
                match (args.seed, explicit) {
                    (Some(seed), _) => mode = StubMode::corrupt(rate, seed).map_err(|e| anyhow::anyhow!("{e}"))?,
                    (None, false) => bail!("--stub corrupt needs --seed"),
                    (None, true) => {}
                }
            }
            BackendSpec::Stub(mode)
        }
        (None, Some(url), _) | (None, None, Some(url)) => {
            let d = RetryPolicy::default();
            BackendSpec::Remote {
                url: url.clone(),
                retry: RetryPolicy {
                    retries: args.retries.or(file.backend.retries).unwrap_or(d.retries),
                    base_delay_ms: file.backend.base_delay_ms.unwrap_or(d.base_delay_ms),
                    max_delay_ms: file.backend.max_delay_ms.unwrap_or(d.max_delay_ms),
                },
                header: file.header()?,
            }
        }
        (None, None, None) => bail!("no backend: pass --backend URL, set GVQA_BACKEND_URL, or use --stub"),
    };

    let mut config = RunConfig::new(&args.dataset, backend);
    if let Some(p) = args.preset {
        config = config.with_preset(p);
    }
    if let Some(s) = args.strategy {
        config.strategy = s;
    }
    if let Some(f) = args.style {
        config.style.context_form = f;
    }
    if let Some(b) = args.format_instruction {
        config.style.include_format_instruction = b;
    }
    if let Some(b) = args.include_detections {
        config.style.include_detections = b;
    }
    config.style.correct_instruction_typo |= args.correct_instruction;
    config.split = args.split;
    config.val_offset = args.val_offset;
    config.detections = args.detections.clone();
    config.edges = args.edges.clone();
    if let Some(p) = &args.rules {
        config.rules = load_rules(p)?;
    }
    config.seed = match &config.backend {
        BackendSpec::Stub(StubMode::Corrupt { seed, .. }) => Some(*seed),
        _ => args.seed,
    };
    config.parallelism = args.parallelism.or(file.backend.parallelism).unwrap_or(1).max(1);
    if let Some(t) = args.timeout.or(file.backend.timeout_secs) {
        config.timeout = Duration::try_from_secs_f64(t).context("timeout")?;
    }
    if let Some(w) = &file.scoring.weights {
        config.scoring.weights = Some(w.clone());
    }
    if let Some(r) = file.scoring.radius {
        config.scoring.radius = r;
    }
    if let Some(m) = file.scoring.match_mode {
        config.scoring.match_mode = m;
    }
    apply_scoring(&mut config.scoring, &args.scoring)?;
    config.out = Some(args.out.clone());
    Ok(config)
}

fn print_report(report: &EvalReport, table: bool) {
    for w in &report.warnings {
        log::warn!("{w}");
    }
    println!(
        "records {} answered {} accuracy {:.2} match {:.2} bleu1 {:.4} rouge_l {:.4} cider {:.4} final {:.2}",
        report.records,
        report.coverage.answered,
        report.accuracy,
        report.match_score.per_object,
        report.bleu[0],
        report.rouge_l,
        report.cider,
        report.final_score
    );
    if table {
        let label = report.run.preset.clone().unwrap_or_else(|| "run".into());
        print!("{}", render_table(&[(label, report)]));
    }
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<u8> {
    let config = build_run_config(args)?;
    let out = run(&config)?;
    for d in &out.diagnostics {
        log::warn!("{d}");
    }
    for f in &out.failures {
        log::error!("{}: {}", f.node_id, f.error);
    }
    print_report(&out.report, args.scoring.table);
    Ok(out.exit_code() as u8)
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<u8> {
    let scenes = parse_dataset(open(&args.dataset)?)?;
    let records = read_predictions(open(&args.predictions)?)
        .with_context(|| format!("reading {}", args.predictions.display()))?;
    let records = resolve_predictions(records, &scenes)?;
    let (mut scoring, echo) = match &args.run_config {
        Some(p) => {
            let m: RunManifest =
                serde_json::from_reader(open(p)?).with_context(|| format!("parsing {}", p.display()))?;
            (m.scoring, m.run)
        }
        None => (ScoringConfig::default(), Default::default()),
    };
    apply_scoring(&mut scoring, &args.scoring)?;
    let report = evaluate(&records, &scoring, echo, None)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_json_atomic(&dir.join(REPORT_FILE), &report)?;
        write_atomic(&dir.join(REPORT_CSV_FILE), report_csv(&report).as_bytes())?;
    }
    print_report(&report, args.scoring.table);
    Ok(0)
}

fn cmd_validate(args: &ValidateArgs) -> anyhow::Result<u8> {
    let scenes = parse_dataset(open(&args.dataset)?)?;
    let edges = match &args.edges {
        Some(p) => load_edge_overrides(&fs::read_to_string(p)?)?,
        None => Default::default(),
    };
    let mut fatal = 0;
    for frame in frames(&scenes) {
        for d in &validate_frame(frame) {
            fatal += usize::from(d.severity == Severity::Fatal);
            println!("{d}");
        }
        if frame.qa_list.is_empty() {
            continue;
        }
        for s in ContextStrategy::ALL {
            let g = match edges.get(&frame.frame_id) {
                Some(list) => build_graph_with(frame, s, &EdgeList(list.clone())),
                None => build_graph_with(frame, s, &SharedObjectRule),
            };
            if let Err(e) = g.and_then(|g| g.execution_order_indices().map(drop)) {
                fatal += 1;
                println!("error[graph] {} ({s}): {e}", frame.frame_id);
            }
        }
    }
    Ok(u8::from(fatal > 0))
}

fn cmd_preset(name: &str) -> anyhow::Result<u8> {
    let v: VersionPreset = name.parse()?;
    let f = v.fragment();
    let value = serde_json::json!({
        "preset": v.name(),
        "strategy": f.strategy,
        "style": f.style,
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(0)
}

fn open(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Preset { show } => cmd_preset(show),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

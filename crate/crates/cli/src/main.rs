//! `refguard`: command-line front end for reflection-gated code repair.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | success (SAFE, FIXED, chain valid, replay matched) |
//! | 1  | negative verdict (`check` UNSAFE, broken chain, replay diverged) |
//! | 2  | `fix` left the sample UNRESOLVED |
//! | 64 | usage error |
//! | 70 | runtime failure |
//! | 78 | configuration error |

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use refguard::bench::{build_report, emit_report, load_corpus, report_text, run_experiment, ExperimentConfig};
use refguard::clock::{Clock, SystemClock};
use refguard::embedding::HashingEmbedder;
use refguard::memory::{query_for, ReflectiveMemory, Tier};
use refguard::pipeline::audit::read_audit_log;
use refguard::pipeline::{replay, verify_audit_bytes, AuditLog, Engine, PipelineError};
use refguard::prompt::PromptEngine;
use refguard::provider::{ChatProvider, HttpProvider, MeteredProvider, MockProvider, MockScript, UsageLedger};
use refguard::self_check;
use refguard::verifier::{TestSpec, Verifier};
use refguard::{CodeSample, Language, TaskStatus};

use config::{FileConfig, ProviderKind};

const EXIT_NEGATIVE: u8 = 1;
const EXIT_UNRESOLVED: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_RUNTIME: u8 = 70;
const EXIT_CONFIG: u8 = 78;

#[derive(Debug, Parser)]
#[command(name = "refguard", version, about = "Reflection-gated secure code repair")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. They override the config file.
#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Model backend.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    /// Scripted replies for the mock provider (JSON Lines).
    #[arg(long, global = true, value_name = "PATH")]
    script: Option<PathBuf>,
    /// Static guidance records (JSON Lines).
    #[arg(long, global = true, value_name = "PATH")]
    static_seed: Option<PathBuf>,
    /// Dynamic-memory snapshot to start from.
    #[arg(long, global = true, value_name = "PATH")]
    memory: Option<PathBuf>,
    /// Retrieval depth.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Minimum confident dynamic hits before skipping the static tier.
    #[arg(long, global = true)]
    k_min: Option<usize>,
    /// Similarity threshold for a confident dynamic hit.
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Reflection rounds per task.
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    /// Append-only audit log.
    #[arg(long, global = true, value_name = "PATH")]
    audit_log: Option<PathBuf>,
    /// Worker threads for `bench`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed recorded with the model parameters and passed to backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask the model whether a file is SAFE (exit 0) or UNSAFE (exit 1).
    Check(InputArgs),
    /// Repair a file; exit 0 when FIXED or SAFE, 2 when UNRESOLVED.
    Fix(FixArgs),
    /// Run a multi-run experiment over a scenario corpus and write reports.
    Bench(BenchArgs),
    /// Verify an audit log's hash chain; exit 0 iff it is intact.
    AuditVerify(AuditVerifyArgs),
    /// Re-run every audited task against a mock script; exit 0 iff all match.
    Replay(ReplayArgs),
    /// Print memory tier sizes and the most recent entries.
    MemoryInspect(InspectArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Source file under review.
    #[arg(long, short, value_name = "PATH")]
    input: PathBuf,
    /// Language; inferred from the file extension when omitted.
    #[arg(long)]
    language: Option<Language>,
    /// File-level context (imports, globals).
    #[arg(long, value_name = "PATH")]
    file_context: Option<PathBuf>,
    /// Function-level context.
    #[arg(long, value_name = "PATH")]
    function_context: Option<PathBuf>,
    /// CWE the sample is suspected of.
    #[arg(long)]
    cwe: Option<String>,
}

#[derive(Debug, Args)]
struct FixArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Where the final code is written.
    #[arg(long, short, value_name = "PATH")]
    output: PathBuf,
    /// Functional test specification (JSON).
    #[arg(long, value_name = "PATH")]
    test_spec: Option<PathBuf>,
    /// Write the dynamic memory here after the task.
    #[arg(long, value_name = "PATH")]
    save_memory: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Scenario corpus directory.
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    /// Output directory for reports, snapshots and (by default) the audit log.
    #[arg(long, value_name = "PATH", default_value = "out")]
    out_dir: PathBuf,
    /// Independent runs; memory persists across them.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Samples per scenario and run.
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Debug, Args)]
struct AuditVerifyArgs {
    /// Audit log to check; falls back to --audit-log.
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Audit log to replay; falls back to --audit-log.
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Entries to list per tier.
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Also show what a query for this file would retrieve.
    #[arg(long, value_name = "PATH")]
    query: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("refguard: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let settings = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Check(args) => cmd_check(&settings, &args),
        Command::Fix(args) => cmd_fix(&settings, &args),
        Command::Bench(args) => cmd_bench(&settings, &args),
        Command::AuditVerify(args) => cmd_audit_verify(&settings, args.log),
        Command::Replay(args) => cmd_replay(&settings, args.log),
        Command::MemoryInspect(args) => cmd_inspect(&settings, &args),
    }
}

/// The config file with command-line overrides applied.
struct Settings {
    file: FileConfig,
    audit_log: Option<PathBuf>,
}

impl Settings {
    fn resolve(args: &CommonArgs) -> Result<Self, Failure> {
        let mut file = match &args.config {
            Some(path) => FileConfig::load(path).map_err(Failure::Config)?,
            None => FileConfig::default(),
        };
        if let Some(p) = args.provider {
            file.provider = p;
        }
        if let Some(p) = &args.script {
            file.script = Some(p.clone());
        }
        if let Some(p) = &args.static_seed {
            file.static_seed = Some(p.clone());
        }
        if let Some(p) = &args.memory {
            file.memory = Some(p.clone());
        }
        let run = &mut file.run;
        if let Some(v) = args.k {
            run.k = v;
        }
        if let Some(v) = args.k_min {
            run.k_min = v;
        }
        if let Some(v) = args.theta {
            run.theta_sim = v;
        }
        if let Some(v) = args.max_rounds {
            run.max_rounds = v;
        }
        if let Some(seed) = args.seed {
            run.theta_model.insert("seed".into(), seed.into());
        }
        if let Some(v) = args.jobs {
            file.jobs = v;
        }
        if file.jobs == 0 {
            return Err(Failure::Config("jobs must be >= 1".into()));
        }
        file.run.validate().map_err(config_err)?;
        Ok(Self {
            file,
            audit_log: args.audit_log.clone(),
        })
    }

    fn provider(&self) -> Result<Arc<dyn ChatProvider>, Failure> {
        match self.file.provider {
            ProviderKind::Mock => {
                let path = self
                    .file
                    .script
                    .as_ref()
                    .ok_or_else(|| Failure::Config("the mock provider needs --script".into()))?;
                let script = MockScript::load(path).map_err(config_err)?;
                Ok(Arc::new(MockProvider::new(script)))
            }
            ProviderKind::Http => Ok(Arc::new(HttpProvider::new(self.file.http.clone()).map_err(config_err)?)),
        }
    }

    fn script(&self) -> Result<MockScript, Failure> {
        let path = self
            .file
            .script
            .as_ref()
            .ok_or_else(|| Failure::Config("replay needs --script".into()))?;
        MockScript::load(path).map_err(config_err)
    }

    /// Fresh memory holding the static seed and, if configured, a snapshot.
    fn memory(&self) -> Result<Arc<ReflectiveMemory>, Failure> {
        let embedder = match self.file.embedding_dim {
            Some(dim) => HashingEmbedder::new(dim).map_err(config_err)?,
            None => HashingEmbedder::default(),
        };
        let memory = ReflectiveMemory::new(Arc::new(embedder)).map_err(config_err)?;
        if let Some(seed) = &self.file.static_seed {
            memory.load_static_seed(seed).map_err(config_err)?;
        }
        if let Some(snapshot) = &self.file.memory {
            if snapshot.exists() {
                memory.restore(snapshot).map_err(config_err)?;
            }
        }
        Ok(Arc::new(memory))
    }

    fn verifier(&self) -> Result<Arc<Verifier>, Failure> {
        Ok(Arc::new(Verifier::new(self.file.verifier.clone()).map_err(config_err)?))
    }

    fn engine(&self, provider: Arc<dyn ChatProvider>) -> Result<Engine, Failure> {
        Ok(Engine::new(self.memory()?, provider, self.verifier()?, self.file.run.clone()))
    }

    fn audit_path(&self, explicit: Option<PathBuf>) -> Result<PathBuf, Failure> {
        explicit
            .or_else(|| self.audit_log.clone())
            .ok_or_else(|| Failure::Usage("no audit log given; pass a path or --audit-log".into()))
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_sample(args: &InputArgs) -> Result<CodeSample, Failure> {
    let language = match args.language {
        Some(l) => l,
        None => {
            let ext = args.input.extension().and_then(|e| e.to_str()).unwrap_or_default();
            ext.parse::<Language>().map_err(|_| {
                Failure::Usage(format!(
                    "cannot infer the language of {}; pass --language",
                    args.input.display()
                ))
            })?
        }
    };
    let code = read_text(&args.input)?;
    let file_context = args.file_context.as_deref().map(read_text).transpose()?.unwrap_or_default();
    let function_context = args
        .function_context
        .as_deref()
        .map(read_text)
        .transpose()?
        .unwrap_or_default();
    let id = args
        .input
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    let mut sample = CodeSample::new(id, language, code).with_context(file_context, function_context);
    if let Some(cwe) = &args.cwe {
        sample = sample.with_cwe_hint(cwe.clone());
    }
    Ok(sample)
}

fn cmd_check(settings: &Settings, args: &InputArgs) -> Result<u8, Failure> {
    let sample = load_sample(args)?;
    let provider = settings.provider()?;
    let prompts = PromptEngine::new(Default::default(), settings.file.run.prompt_budget_chars);
    let ledger = UsageLedger::new();
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let metered = MeteredProvider {
        inner: provider.as_ref(),
        ledger: &ledger,
        clock: &clock,
    };
    let verdict =
        self_check::check(&sample, &prompts, settings.file.run.self_check_model(), &metered).map_err(runtime)?;
    if verdict.is_safe() {
        println!("SAFE");
        Ok(0)
    } else {
        println!("UNSAFE");
        Ok(EXIT_NEGATIVE)
    }
}

fn cmd_fix(settings: &Settings, args: &FixArgs) -> Result<u8, Failure> {
    let sample = load_sample(&args.input)?;
    let test_spec: Option<TestSpec> = match &args.test_spec {
        Some(path) => Some(
            serde_json::from_str(&read_text(path)?)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let engine = settings.engine(settings.provider()?)?;
    let audit = match &settings.audit_log {
        Some(path) => AuditLog::open(path).map_err(audit_open_error)?,
        None => AuditLog::in_memory(),
    };
    let result = engine
        .run_task(&sample, test_spec.as_ref(), None, &audit)
        .map_err(runtime)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    fs::write(&args.output, &result.outcome.final_code)
        .map_err(|e| runtime(format!("{}: {e}", args.output.display())))?;
    if let Some(path) = &args.save_memory {
        engine.memory.snapshot(path).map_err(runtime)?;
    }
    let status = result.outcome.status;
    println!(
        "{} after {} round(s)",
        serde_json::to_value(status).map_err(runtime)?.as_str().unwrap_or_default(),
        result.outcome.rounds_used
    );
    match status {
        TaskStatus::SafePassthrough | TaskStatus::Fixed => Ok(0),
        TaskStatus::Unresolved => Ok(EXIT_UNRESOLVED),
        TaskStatus::Aborted => Err(Failure::Runtime("the task was aborted by a backend failure".into())),
    }
}

fn audit_open_error(e: PipelineError) -> Failure {
    match e {
        PipelineError::BrokenChain { .. } | PipelineError::AuditParse { .. } => config_err(e),
        other => runtime(other),
    }
}

fn cmd_bench(settings: &Settings, args: &BenchArgs) -> Result<u8, Failure> {
    let corpus = load_corpus(&args.corpus).map_err(config_err)?;
    fs::create_dir_all(&args.out_dir).map_err(runtime)?;
    let audit_path = settings
        .audit_log
        .clone()
        .unwrap_or_else(|| args.out_dir.join("audit.jsonl"));
    let audit = AuditLog::open(&audit_path).map_err(audit_open_error)?;
    let engine = settings.engine(settings.provider()?)?;
    let config = ExperimentConfig {
        runs: args.runs,
        samples_per_scenario: args.samples,
        jobs: settings.file.jobs,
        snapshot_dir: Some(args.out_dir.clone()),
    };
    let result = run_experiment(&corpus, &engine, &audit, &config).map_err(|e| match e {
        refguard::bench::BenchError::Precondition(m) => Failure::Usage(m),
        other => runtime(other),
    })?;
    let report = build_report(&result, settings.file.run.price_per_1k);
    emit_report(&report, &args.out_dir).map_err(runtime)?;
    print!("{}", report_text(&report));
    Ok(0)
}

fn cmd_audit_verify(settings: &Settings, log: Option<PathBuf>) -> Result<u8, Failure> {
    let path = settings.audit_path(log)?;
    let bytes = fs::read(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let check = verify_audit_bytes(&bytes);
    if check.valid {
        println!("valid: {} record(s)", check.records);
        Ok(0)
    } else {
        println!("broken at record {}", check.first_broken.unwrap_or(0));
        Ok(EXIT_NEGATIVE)
    }
}

fn cmd_replay(settings: &Settings, log: Option<PathBuf>) -> Result<u8, Failure> {
    let path = settings.audit_path(log)?;
    let records = read_audit_log(&path).map_err(config_err)?;
    let script = settings.script()?;
    let base = settings.engine(Arc::new(MockProvider::new(MockScript::default())))?;
    let report = replay(&records, script, |provider| Ok(Engine { provider, ..base })).map_err(runtime)?;
    match &report.divergence {
        None => {
            println!("replayed {} record(s); all outcomes match", report.outcomes.len());
            Ok(0)
        }
        Some(d) => {
            println!(
                "divergence at record {} field {}: expected {:?}, got {:?}",
                d.record_index, d.field, d.expected, d.actual
            );
            Ok(EXIT_NEGATIVE)
        }
    }
}

fn excerpt(text: &str, limit: usize) -> String {
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("-").trim();
    if line.chars().count() > limit {
        format!("{}...", line.chars().take(limit).collect::<String>())
    } else {
        line.to_string()
    }
}

fn cmd_inspect(settings: &Settings, args: &InspectArgs) -> Result<u8, Failure> {
    let memory = settings.memory()?;
    println!("dynamic: {}", memory.dynamic_len());
    println!("static:  {}", memory.static_len());
    for tier in [Tier::Dynamic, Tier::Static] {
        let entries = memory.entries(tier);
        if entries.is_empty() {
            continue;
        }
        println!();
        println!("{tier:?} (most recent first)");
        for e in entries.iter().rev().take(args.top) {
            println!(
                "  {}  {}  {}",
                e.entry_id,
                e.cwe_tag.as_deref().unwrap_or("-"),
                excerpt(&e.diagnosis, 70)
            );
        }
    }
    if let Some(path) = &args.query {
        let code = read_text(path)?;
        let query = query_for(&code, "", "", settings.file.run.retrieval_params());
        let evidence = memory.retrieve(&query).map_err(runtime)?;
        println!();
        println!(
            "query {}: {} item(s), fallback {}",
            path.display(),
            evidence.items.len(),
            if evidence.fallback_used { "used" } else { "not used" }
        );
        for item in &evidence.items {
            println!("  {:.3}  {}", item.similarity, item.entry.entry_id);
        }
    }
    Ok(0)
}

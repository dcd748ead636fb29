//! Verification gate: compile check, optional functional tests, static scan.
//!
//! External tools are driven as subprocesses through [`AdapterCommand`]
//! templates (`{file}` is replaced by the candidate path, `{findings}` by the
//! path the analyzer should write its JSON Lines findings to). Every gate call
//! works inside its own temporary directory.
//!
//! Analyzer exit codes: `0` clean, `1` findings written, anything else is a
//! crash. A crash is an error unless `allow_downgrade` is set, in which case
//! the built-in [`RuleSet`] is used instead and the report says so.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::sample::{is_supported_cwe, normalize_cwe, Language};

pub const DEFAULT_TEST_TIMEOUT_SECS: f64 = 10.0;
const COMPILE_TIMEOUT: Duration = Duration::from_secs(60);
const BUILTIN_RULES: &str = include_str!("../rules/default_rules.jsonl");

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("adapter program `{program}` not found (check the verifier configuration)")]
    AdapterMissing { program: String },
    #[error("no compile adapter configured for {0}")]
    NoCompiler(Language),
    #[error("static analyzer failed: {0}")]
    AnalyzerCrashed(String),
    #[error("static analyzer findings unreadable: {0}")]
    BadFindings(String),
    #[error("rule `{rule_id}`: {message}")]
    Rule { rule_id: String, message: String },
    #[error("{path}: line {line}: {message}")]
    RuleFile {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// A subprocess command template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl AdapterCommand {
    pub fn new(program: impl Into<String>, args: &[&str]) -> Self {
        Self {
            program: program.into(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }

    fn expand(&self, file: &Path, findings: &Path) -> (String, Vec<String>) {
        let sub = |s: &str| {
            s.replace("{file}", &file.display().to_string())
                .replace("{findings}", &findings.display().to_string())
        };
        (sub(&self.program), self.args.iter().map(|a| sub(a)).collect())
    }
}

pub fn default_compilers() -> BTreeMap<Language, AdapterCommand> {
    BTreeMap::from([
        (Language::C, AdapterCommand::new("cc", &["-fsyntax-only", "-x", "c", "{file}"])),
        (Language::Cpp, AdapterCommand::new("c++", &["-fsyntax-only", "-x", "c++", "{file}"])),
        (
            Language::Python,
            AdapterCommand::new(
                "python3",
                &["-c", "import ast,sys; ast.parse(open(sys.argv[1]).read(), sys.argv[1])", "{file}"],
            ),
        ),
    ])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub compilers: BTreeMap<Language, AdapterCommand>,
    pub analyzer: Option<AdapterCommand>,
    pub allow_downgrade: bool,
    /// JSON Lines rule file; the built-in rules are used when absent.
    pub rules_path: Option<PathBuf>,
    pub default_test_timeout_secs: f64,
    pub max_concurrent_subprocesses: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            compilers: default_compilers(),
            analyzer: None,
            allow_downgrade: false,
            rules_path: None,
            default_test_timeout_secs: DEFAULT_TEST_TIMEOUT_SECS,
            max_concurrent_subprocesses: 4,
        }
    }
}

// ---------------------------------------------------------------------------
// subprocess plumbing

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcOutput {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
}

#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Runs `program args` in `cwd` in its own process group; on timeout the whole
/// group is killed.
pub fn run_with_timeout(
    program: &str,
    args: &[String],
    cwd: &Path,
    timeout: Duration,
) -> Result<ProcOutput, VerifyError> {
    let mut child = Command::new(program)
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => VerifyError::AdapterMissing {
                program: program.to_string(),
            },
            _ => VerifyError::Io(e),
        })?;
    let pid = child.id() as i32;
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            // SAFETY: signalling our own child's process group.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(5));
    };
    // Grandchildren may still hold the pipes after a normal exit.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    Ok(ProcOutput {
        exit_code: status.code(),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        timed_out,
    })
}

// ---------------------------------------------------------------------------
// rules

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlessScope {
    #[default]
    Line,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule_id: String,
    pub cwe_id: String,
    pub language: Language,
    pub pattern: String,
    /// Suppresses the finding when this pattern also matches (on the same
    /// line, or anywhere in the file for `unless_scope: "file"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unless: Option<String>,
    #[serde(default)]
    pub unless_scope: UnlessScope,
    pub message: String,
}

#[derive(Debug, Clone)]
struct Rule {
    spec: RuleSpec,
    pattern: Regex,
    unless: Option<Regex>,
}

impl Rule {
    fn compile(mut spec: RuleSpec) -> Result<Self, VerifyError> {
        let err = |message: String| VerifyError::Rule {
            rule_id: spec.rule_id.clone(),
            message,
        };
        if !is_supported_cwe(&spec.cwe_id) {
            return Err(err(format!("unsupported cwe_id `{}`", spec.cwe_id)));
        }
        let pattern = Regex::new(&spec.pattern).map_err(|e| err(e.to_string()))?;
        let unless = spec
            .unless
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| err(e.to_string()))?;
        spec.cwe_id = normalize_cwe(&spec.cwe_id).expect("checked above");
        Ok(Self { spec, pattern, unless })
    }

    fn applies_to(&self, language: Language) -> bool {
        self.spec.language == language
            || (self.spec.language == Language::C && language == Language::Cpp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub cwe_id: String,
    pub message: String,
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
}

/// Line-oriented pattern rules used when no external analyzer is available.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES, Path::new("<builtin>")).expect("built-in rules are valid")
    }

    pub fn from_specs(specs: Vec<RuleSpec>) -> Result<Self, VerifyError> {
        Ok(Self {
            rules: specs.into_iter().map(Rule::compile).collect::<Result<_, _>>()?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, VerifyError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let file_err = |message: String| VerifyError::RuleFile {
                path: origin.display().to_string(),
                line: i + 1,
                message,
            };
            let spec: RuleSpec = serde_json::from_str(line).map_err(|e| file_err(e.to_string()))?;
            rules.push(Rule::compile(spec).map_err(|e| file_err(e.to_string()))?);
        }
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn specs(&self) -> impl Iterator<Item = &RuleSpec> {
        self.rules.iter().map(|r| &r.spec)
    }

    pub fn scan(&self, code: &str, language: Language) -> Vec<Finding> {
        let mut findings = Vec::new();
        let comment = match language {
            Language::Python => "#",
            Language::C | Language::Cpp => "//",
        };
        for rule in self.rules.iter().filter(|r| r.applies_to(language)) {
            let file_suppressed = rule.spec.unless_scope == UnlessScope::File
                && rule.unless.as_ref().is_some_and(|u| u.is_match(code));
            if file_suppressed {
                continue;
            }
            for (i, line) in code.lines().enumerate() {
                if line.trim_start().starts_with(comment) || !rule.pattern.is_match(line) {
                    continue;
                }
                let line_suppressed = rule.spec.unless_scope == UnlessScope::Line
                    && rule.unless.as_ref().is_some_and(|u| u.is_match(line));
                if !line_suppressed {
                    findings.push(Finding {
                        cwe_id: rule.spec.cwe_id.clone(),
                        message: rule.spec.message.clone(),
                        line: i + 1,
                        rule_id: Some(rule.spec.rule_id.clone()),
                    });
                }
            }
        }
        findings.sort_by(|a, b| a.line.cmp(&b.line).then_with(|| a.rule_id.cmp(&b.rule_id)));
        findings
    }
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScanTool {
    ExternalAdapter,
    RuleFallback,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TestFailure {
    Timeout,
    ExitCode,
    OutputMismatch,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimes {
    pub compile_ms: u64,
    pub tests_ms: Option<u64>,
    pub scan_ms: Option<u64>,
}

impl StageTimes {
    pub fn total_ms(&self) -> u64 {
        self.compile_ms + self.tests_ms.unwrap_or(0) + self.scan_ms.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub compiled: bool,
    pub compile_diagnostics: String,
    pub tests_passed: Option<bool>,
    pub test_failure: Option<TestFailure>,
    pub findings: Vec<Finding>,
    pub tool: ScanTool,
    pub stage_times: StageTimes,
}

impl VerificationReport {
    /// Compiled with zero findings.
    pub fn secure(&self) -> bool {
        self.compiled && self.findings.is_empty()
    }

    /// Good enough to deposit: secure, and tests (when present) passed.
    pub fn verified(&self) -> bool {
        self.secure() && self.tests_passed != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileOutcome {
    pub ok: bool,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestOutcome {
    pub passed: bool,
    pub failure: Option<TestFailure>,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOutcome {
    pub findings: Vec<Finding>,
    pub tool: ScanTool,
}

/// How a scenario's functional test is run: `command` (with `{file}`) must exit
/// 0 and its stdout must match every `expected` regex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub command: Vec<String>,
    #[serde(default)]
    pub expected: Vec<String>,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
}

pub struct Verifier {
    config: VerifierConfig,
    rules: RuleSet,
    clock: Arc<dyn Clock>,
    slots: Semaphore,
}

impl std::fmt::Debug for Verifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Verifier")
            .field("config", &self.config)
            .field("rules", &self.rules.len())
            .finish()
    }
}

impl Verifier {
    pub fn new(config: VerifierConfig) -> Result<Self, VerifyError> {
        let rules = match &config.rules_path {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::builtin(),
        };
        Ok(Self::with_rules(config, rules))
    }

    pub fn with_rules(config: VerifierConfig, rules: RuleSet) -> Self {
        let slots = Semaphore::new(config.max_concurrent_subprocesses);
        Self {
            config,
            rules,
            clock: Arc::new(SystemClock),
            slots,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    fn write_candidate(dir: &Path, code: &str, language: Language) -> Result<PathBuf, VerifyError> {
        let path = dir.join(format!("candidate.{}", language.file_extension()));
        fs::write(&path, code)?;
        Ok(path)
    }

    fn run_adapter(
        &self,
        cmd: &AdapterCommand,
        file: &Path,
        findings: &Path,
        cwd: &Path,
        timeout: Duration,
    ) -> Result<ProcOutput, VerifyError> {
        let (program, args) = cmd.expand(file, findings);
        let _slot = self.slots.acquire();
        run_with_timeout(&program, &args, cwd, timeout)
    }

    pub fn compile_check(&self, code: &str, language: Language) -> Result<CompileOutcome, VerifyError> {
        let dir = tempfile::tempdir()?;
        let file = Self::write_candidate(dir.path(), code, language)?;
        self.compile_in(dir.path(), &file, language)
    }

    fn compile_in(&self, dir: &Path, file: &Path, language: Language) -> Result<CompileOutcome, VerifyError> {
        let cmd = self
            .config
            .compilers
            .get(&language)
            .ok_or(VerifyError::NoCompiler(language))?;
        let out = self.run_adapter(cmd, file, &dir.join("findings.jsonl"), dir, COMPILE_TIMEOUT)?;
        let mut diagnostics = out.stderr;
        if !out.stdout.is_empty() {
            diagnostics.push_str(&out.stdout);
        }
        if out.timed_out {
            diagnostics.push_str("compile check timed out\n");
        }
        Ok(CompileOutcome {
            ok: out.exit_code == Some(0) && !out.timed_out,
            diagnostics: scrub_workdir(&diagnostics, dir),
        })
    }

    pub fn run_tests(
        &self,
        code: &str,
        language: Language,
        spec: Option<&TestSpec>,
    ) -> Result<Option<TestOutcome>, VerifyError> {
        let Some(spec) = spec else { return Ok(None) };
        let dir = tempfile::tempdir()?;
        let file = Self::write_candidate(dir.path(), code, language)?;
        self.tests_in(dir.path(), &file, spec).map(Some)
    }

    fn tests_in(&self, dir: &Path, file: &Path, spec: &TestSpec) -> Result<TestOutcome, VerifyError> {
        let Some((program, args)) = spec.command.split_first() else {
            return Err(VerifyError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                "test_spec.command is empty",
            )));
        };
        let cmd = AdapterCommand {
            program: program.clone(),
            args: args.to_vec(),
        };
        let secs = spec.timeout_secs.unwrap_or(self.config.default_test_timeout_secs);
        let timeout = Duration::from_secs_f64(secs.max(0.0));
        let out = self.run_adapter(&cmd, file, &dir.join("findings.jsonl"), dir, timeout)?;
        let failure = if out.timed_out {
            Some(TestFailure::Timeout)
        } else if out.exit_code != Some(0) {
            Some(TestFailure::ExitCode)
        } else {
            let mut mismatch = None;
            for pat in &spec.expected {
                let re = regex::RegexBuilder::new(pat)
                    .multi_line(true)
                    .build()
                    .map_err(|e| VerifyError::Io(io::Error::new(io::ErrorKind::InvalidInput, e)))?;
                if !re.is_match(&out.stdout) {
                    mismatch = Some(TestFailure::OutputMismatch);
                    break;
                }
            }
            mismatch
        };
        Ok(TestOutcome {
            passed: failure.is_none(),
            failure,
            stdout: scrub_workdir(&out.stdout, dir),
            stderr: scrub_workdir(&out.stderr, dir),
        })
    }

    pub fn static_scan(&self, code: &str, language: Language) -> Result<ScanOutcome, VerifyError> {
        let dir = tempfile::tempdir()?;
        let file = Self::write_candidate(dir.path(), code, language)?;
        self.scan_in(dir.path(), &file, code, language)
    }

    fn scan_in(&self, dir: &Path, file: &Path, code: &str, language: Language) -> Result<ScanOutcome, VerifyError> {
        if let Some(cmd) = &self.config.analyzer {
            match self.external_scan(cmd, dir, file) {
                Ok(findings) => {
                    return Ok(ScanOutcome {
                        findings,
                        tool: ScanTool::ExternalAdapter,
                    })
                }
                Err(e) if self.config.allow_downgrade => {
                    log::warn!("static analyzer unavailable, using rule fallback: {e}");
                }
                Err(e) => return Err(e),
            }
        }
        if self.rules.is_empty() {
            return Ok(ScanOutcome {
                findings: Vec::new(),
                tool: ScanTool::None,
            });
        }
        Ok(ScanOutcome {
            findings: self.rules.scan(code, language),
            tool: ScanTool::RuleFallback,
        })
    }

    fn external_scan(&self, cmd: &AdapterCommand, dir: &Path, file: &Path) -> Result<Vec<Finding>, VerifyError> {
        let findings_path = dir.join("findings.jsonl");
        let out = self
            .run_adapter(cmd, file, &findings_path, dir, COMPILE_TIMEOUT)
            .map_err(|e| VerifyError::AnalyzerCrashed(e.to_string()))?;
        match (out.timed_out, out.exit_code) {
            (false, Some(0)) => Ok(Vec::new()),
            (false, Some(1)) => {
                let text = fs::read_to_string(&findings_path)
                    .map_err(|e| VerifyError::BadFindings(format!("{}: {e}", findings_path.display())))?;
                parse_findings(&text)
            }
            (true, _) => Err(VerifyError::AnalyzerCrashed("timed out".into())),
            (false, code) => Err(VerifyError::AnalyzerCrashed(format!(
                "exit status {code:?}: {}",
                out.stderr.trim()
            ))),
        }
    }

    /// Compile, then tests (if a spec is given), then the static scan. Nothing
    /// after a failed compile runs.
    pub fn gate(
        &self,
        code: &str,
        language: Language,
        test_spec: Option<&TestSpec>,
    ) -> Result<VerificationReport, VerifyError> {
        let dir = tempfile::tempdir()?;
        let file = Self::write_candidate(dir.path(), code, language)?;

        let t0 = self.clock.now_millis();
        let compile = self.compile_in(dir.path(), &file, language)?;
        let compile_ms = self.clock.now_millis().saturating_sub(t0);
        if !compile.ok {
            return Ok(VerificationReport {
                compiled: false,
                compile_diagnostics: compile.diagnostics,
                tests_passed: None,
                test_failure: None,
                findings: Vec::new(),
                tool: ScanTool::None,
                stage_times: StageTimes {
                    compile_ms,
                    tests_ms: None,
                    scan_ms: None,
                },
            });
        }

        let (tests_passed, test_failure, tests_ms) = match test_spec {
            Some(spec) => {
                let t = self.clock.now_millis();
                let outcome = self.tests_in(dir.path(), &file, spec)?;
                let ms = self.clock.now_millis().saturating_sub(t);
                (Some(outcome.passed), outcome.failure, Some(ms))
            }
            None => (None, None, None),
        };

        let t = self.clock.now_millis();
        let scan = self.scan_in(dir.path(), &file, code, language)?;
        let scan_ms = self.clock.now_millis().saturating_sub(t);

        Ok(VerificationReport {
            compiled: true,
            compile_diagnostics: compile.diagnostics,
            tests_passed,
            test_failure,
            findings: scan.findings,
            tool: scan.tool,
            stage_times: StageTimes {
                compile_ms,
                tests_ms,
                scan_ms: Some(scan_ms),
            },
        })
    }
}

/// Replaces the per-gate scratch directory in tool output with a fixed
/// marker so diagnostics do not vary between runs.
fn scrub_workdir(text: &str, dir: &Path) -> String {
    text.replace(&*dir.to_string_lossy(), "<workdir>")
}

/// Parses analyzer output: one `{cwe_id, message, line}` object per line.
pub fn parse_findings(text: &str) -> Result<Vec<Finding>, VerifyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut f: Finding = serde_json::from_str(line)
            .map_err(|e| VerifyError::BadFindings(format!("line {}: {e}", i + 1)))?;
        if let Some(c) = normalize_cwe(&f.cwe_id) {
            f.cwe_id = c;
        }
        out.push(f);
    }
    Ok(out)
}

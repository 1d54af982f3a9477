//! Operator commands. The binary is a thin wrapper around [`run`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::anonymizer::{anonymize_text, SessionVault};
use crate::detector::{Detector, EntityKind};
use crate::gateway::http::{serve, ServeError};
use crate::gateway::{ConfigError, ServiceConfig};
use crate::policy::{CompliancePolicy, RedactionLevel};
use crate::rag::{read_kb_dir, IngestOutcome, KnowledgeBase, RagError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    Rejected = 2,
    Failure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

impl From<ExitStatus> for std::process::ExitCode {
    fn from(s: ExitStatus) -> Self {
        std::process::ExitCode::from(s as u8)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "privgate",
    version,
    about = "Privacy-preserving LLM gateway for customer support"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Anonymize text line by line with a fresh vault.
    Redact(RedactArgs),
    /// Build or query a knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Inspect an audit log.
    #[command(subcommand)]
    Audit(AuditCommand),
}

#[derive(Debug, Args)]
pub struct RedactArgs {
    #[arg(long, default_value = "standard")]
    pub level: RedactionLevel,
    /// Input file; stdin when omitted.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
    /// Writes per-kind detection counts as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Ingest every .txt document in a directory.
    Ingest {
        dir: PathBuf,
        /// Where to save the built index.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Print the top chunks for a query as `doc_id#chunk score`.
    Query {
        query: String,
        #[arg(short = 'k', default_value_t = 5)]
        k: usize,
        /// Saved index to search.
        #[arg(long, conflicts_with = "dir", required_unless_present = "dir")]
        index: Option<PathBuf>,
        /// Source directory to index on the fly.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Pretty-print the last records.
    Tail {
        #[arg(long)]
        path: PathBuf,
        #[arg(short = 'n', default_value_t = 10)]
        n: usize,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() {
                ExitStatus::Usage
            } else {
                ExitStatus::Success
            };
        }
    };
    let result = match cli.command {
        Command::Serve { config } => cmd_serve(&config),
        Command::Redact(args) => cmd_redact(&args, stdin, stdout),
        Command::Kb(KbCommand::Ingest { dir, index }) => cmd_kb_ingest(&dir, index.as_deref(), stdout),
        Command::Kb(KbCommand::Query { query, k, index, dir }) => {
            cmd_kb_query(&query, k, index.as_deref(), dir.as_deref(), stdout)
        }
        Command::Audit(AuditCommand::Tail { path, n }) => cmd_audit_tail(&path, n, stdout),
    };
    match result {
        Ok(status) => status,
        Err((status, message)) => {
            let _ = writeln!(stderr, "error: {message}");
            status
        }
    }
}

type CmdResult = Result<ExitStatus, (ExitStatus, String)>;

fn failure(e: impl std::fmt::Display) -> (ExitStatus, String) {
    (ExitStatus::Failure, e.to_string())
}

pub fn cmd_serve(config: &Path) -> CmdResult {
    if !config.is_file() {
        return Err((ExitStatus::Usage, format!("config file {} not found", config.display())));
    }
    let config = ServiceConfig::load(config).map_err(failure)?;
    match serve(&config) {
        Ok(()) => Ok(ExitStatus::Success),
        Err(e @ ServeError::Config(ConfigError::Policy(_))) => Err((ExitStatus::Rejected, e.to_string())),
        Err(e) => Err(failure(e)),
    }
}

/// Detection counts per kind, as in an audit record.
pub type DetectionReport = BTreeMap<EntityKind, usize>;

/// Anonymizes each line of `input` with one fresh vault. Line endings are
/// preserved.
pub fn redact_stream(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    detector: &Detector,
    policy: &CompliancePolicy,
    level: RedactionLevel,
) -> io::Result<DetectionReport> {
    let mut vault = SessionVault::new("batch");
    let mut report = DetectionReport::new();
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let body = line.trim_end_matches(['\n', '\r']);
        let ending = &line[body.len()..];
        let anon = anonymize_text(body, detector, &mut vault, policy, level);
        for s in &anon.detections {
            *report.entry(s.kind.clone()).or_default() += 1;
        }
        output.write_all(anon.text.as_bytes())?;
        output.write_all(ending.as_bytes())?;
    }
    output.flush()?;
    vault.purge();
    Ok(report)
}

pub fn cmd_redact(args: &RedactArgs, stdin: &mut dyn Read, stdout: &mut dyn Write) -> CmdResult {
    let detector = Detector::with_defaults();
    let policy = CompliancePolicy::default();
    let mut input: Box<dyn BufRead + '_> = match &args.input {
        Some(p) => Box::new(BufReader::new(
            File::open(p).map_err(|e| failure(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufReader::new(stdin)),
    };
    let mut file;
    let output: &mut dyn Write = match &args.output {
        Some(p) => {
            file = io::BufWriter::new(File::create(p).map_err(|e| failure(format!("{}: {e}", p.display())))?);
            &mut file
        }
        None => stdout,
    };
    let report = redact_stream(&mut input, output, &detector, &policy, args.level).map_err(failure)?;
    if let Some(p) = &args.report {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(p, json + "\n").map_err(|e| failure(format!("{}: {e}", p.display())))?;
    }
    Ok(ExitStatus::Success)
}

fn kind_list(spans: &[crate::detector::EntitySpan]) -> String {
    let mut kinds: Vec<&str> = spans.iter().map(|s| s.kind.label()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    kinds.join(", ")
}

fn rag_failure(e: RagError) -> (ExitStatus, String) {
    match e {
        RagError::MalformedHeader(_) | RagError::InvalidDocId(_) | RagError::DuplicateDocument(_) => {
            (ExitStatus::Usage, e.to_string())
        }
        other => failure(other),
    }
}

/// Ingests `dir` and reports one line per file. Rejected files are named
/// with the kinds found, never the values.
pub fn cmd_kb_ingest(dir: &Path, index: Option<&Path>, stdout: &mut dyn Write) -> CmdResult {
    let detector = Detector::with_defaults();
    let mut kb = KnowledgeBase::new();
    let mut rejected = 0;
    for (path, doc) in read_kb_dir(dir).map_err(rag_failure)? {
        let doc = doc
            .map_err(rag_failure)
            .map_err(|(s, m)| (s, format!("{}: {m}", path.display())))?;
        let line = match kb.ingest(doc, &detector).map_err(rag_failure)? {
            IngestOutcome::Accepted { chunks } => format!("accepted {} ({chunks} chunks)", path.display()),
            IngestOutcome::Rejected(spans) => {
                rejected += 1;
                format!("rejected {}: contains {}", path.display(), kind_list(&spans))
            }
        };
        writeln!(stdout, "{line}").map_err(failure)?;
    }
    if let Some(index) = index {
        kb.save(index).map_err(failure)?;
    }
    Ok(if rejected > 0 {
        ExitStatus::Rejected
    } else {
        ExitStatus::Success
    })
}

pub fn cmd_kb_query(
    query: &str,
    k: usize,
    index: Option<&Path>,
    dir: Option<&Path>,
    stdout: &mut dyn Write,
) -> CmdResult {
    let kb = match (index, dir) {
        (Some(index), _) => KnowledgeBase::load(index).map_err(rag_failure)?,
        (None, Some(dir)) => {
            let detector = Detector::with_defaults();
            let mut kb = KnowledgeBase::new();
            for (_, doc) in read_kb_dir(dir).map_err(rag_failure)? {
                kb.ingest(doc.map_err(rag_failure)?, &detector).map_err(rag_failure)?;
            }
            kb
        }
        (None, None) => return Err((ExitStatus::Usage, "--index or --dir is required".into())),
    };
    for r in kb.retrieve(query, k) {
        writeln!(stdout, "{} {:.6}", r.chunk.reference(), r.score).map_err(failure)?;
    }
    Ok(ExitStatus::Success)
}

pub fn cmd_audit_tail(path: &Path, n: usize, stdout: &mut dyn Write) -> CmdResult {
    let raw = std::fs::read_to_string(path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    for line in &lines[lines.len().saturating_sub(n)..] {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| failure(format!("{}: {e}", path.display())))?;
        let pretty = serde_json::to_string_pretty(&value).expect("json value serializes");
        writeln!(stdout, "{pretty}").map_err(failure)?;
    }
    Ok(ExitStatus::Success)
}

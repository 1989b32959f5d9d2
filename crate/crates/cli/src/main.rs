//! `genagent`: run scenarios, inspect memory, replay logs and interview agents.

mod replay;

use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use genagent_core::dialogue::{InterviewSession, DEFAULT_BUDGET_CHARS};
use genagent_core::engine::{self, ConfigError, EngineError, ScenarioConfig, Simulation, EVENTS_FILE};
use genagent_core::memory::MemoryKind;
use genagent_core::reflection;
use genagent_core::retrieval;

#[derive(Debug, Parser)]
#[command(name = "genagent", version, about = "Deterministic generative-agent simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario (or continue a snapshot) and print a per-day digest.
    Run {
        /// Scenario file (TOML).
        #[arg(required_unless_present = "resume")]
        scenario: Option<PathBuf>,
        /// Number of ticks to simulate.
        #[arg(long, default_value_t = 96)]
        ticks: u64,
        /// Overrides the scenario seed.
        #[arg(long, conflicts_with = "resume")]
        seed: Option<u64>,
        /// Output directory for the event log and snapshot.
        #[arg(long, conflicts_with = "resume")]
        out: Option<PathBuf>,
        /// Continue the snapshot in this directory instead of starting fresh.
        #[arg(long, value_name = "DIR", conflicts_with = "scenario")]
        resume: Option<PathBuf>,
    },
    /// List an agent's memories, or score them against a query.
    Inspect {
        /// Snapshot directory written by `run`.
        snapshot: PathBuf,
        #[arg(long)]
        agent: String,
        /// Only list records of this kind (observation, reflection, plan).
        #[arg(long)]
        kind: Option<String>,
        /// Number of rows for a scored query.
        #[arg(long, value_name = "K", requires = "query")]
        top_k: Option<usize>,
        /// Query to score memories against.
        query: Option<String>,
    },
    /// Pretty-print an event log.
    Replay {
        /// Event log, or the run directory containing it.
        log: PathBuf,
        /// First tick to show.
        #[arg(long)]
        from: Option<u64>,
        /// Last tick to show.
        #[arg(long)]
        to: Option<u64>,
    },
    /// Talk to an agent. One question per line; "/quit" ends the session.
    Interview {
        snapshot: PathBuf,
        #[arg(long)]
        agent: String,
        /// Store the exchange in the agent's memory and save the snapshot.
        #[arg(long)]
        persist: bool,
    },
    /// Run the reflection pipeline for an agent now and print the result.
    /// The snapshot is not modified.
    Reflect {
        snapshot: PathBuf,
        #[arg(long)]
        agent: String,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
    /// Stdout was closed by the reader, e.g. `genagent replay ... | head`.
    Closed,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
            CliError::Closed => 0,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => m,
            CliError::Closed => "output closed",
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::Snapshot { .. } => CliError::Config(e.to_string()),
            EngineError::UnknownAgent(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime<E: std::fmt::Display + 'static>(e: E) -> CliError {
    let any: &dyn std::any::Any = &e;
    if any
        .downcast_ref::<io::Error>()
        .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    {
        return CliError::Closed;
    }
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version also arrive here, with exit code 0
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) | Err(CliError::Closed) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<(), CliError> {
    match command {
        Command::Run {
            scenario,
            ticks,
            seed,
            out: dir,
            resume,
        } => run(scenario, ticks, seed, dir, resume, out),
        Command::Inspect {
            snapshot,
            agent,
            kind,
            top_k,
            query,
        } => inspect(&snapshot, &agent, kind.as_deref(), top_k, query.as_deref(), out),
        Command::Replay { log, from, to } => {
            let path = if log.is_dir() { log.join(EVENTS_FILE) } else { log };
            let events = engine::read_events(&path)?;
            replay::render(&events, from, to, out).map_err(runtime)
        }
        Command::Interview {
            snapshot,
            agent,
            persist,
        } => interview(&snapshot, &agent, persist, out),
        Command::Reflect { snapshot, agent } => reflect(&snapshot, &agent, out),
    }
}

fn run(
    scenario: Option<PathBuf>,
    ticks: u64,
    seed: Option<u64>,
    dir: Option<PathBuf>,
    resume: Option<PathBuf>,
    out: &mut impl Write,
) -> Result<(), CliError> {
    let (events, dir, agents) = match (resume, scenario) {
        (Some(dir), _) => {
            let events = engine::resume(&dir, ticks)?;
            let agents = Simulation::load(&dir)?
                .config()
                .agent_names()
                .map(String::from)
                .collect::<Vec<_>>();
            (events, dir, agents)
        }
        (None, Some(path)) => {
            let mut config = ScenarioConfig::from_path(&path)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let dir = dir.unwrap_or_else(|| default_out(&path));
            let agents = config.agent_names().map(String::from).collect::<Vec<_>>();
            (engine::run(config, ticks, &dir)?, dir, agents)
        }
        (None, None) => return Err(CliError::Usage("a scenario path or --resume is required".into())),
    };
    for d in engine::digest(&events) {
        let reflections: Vec<String> = agents
            .iter()
            .map(|a| format!("{a} {}", d.reflections.get(a).copied().unwrap_or(0)))
            .collect();
        writeln!(
            out,
            "day {}: {} events, {} dialogues, {} errors; reflections: {}",
            d.day,
            d.events,
            d.dialogues,
            d.errors,
            reflections.join(", ")
        )
        .map_err(runtime)?;
    }
    writeln!(
        out,
        "wrote {} events to {}",
        events.len(),
        dir.join(EVENTS_FILE).display()
    )
    .map_err(runtime)?;
    Ok(())
}

fn default_out(scenario: &Path) -> PathBuf {
    let stem = scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    PathBuf::from("runs").join(stem)
}

fn short(text: &str, width: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= width {
        flat
    } else {
        let cut: String = flat.chars().take(width.saturating_sub(1)).collect();
        format!("{cut}…")
    }
}

fn inspect(
    snapshot: &Path,
    agent: &str,
    kind: Option<&str>,
    top_k: Option<usize>,
    query: Option<&str>,
    out: &mut impl Write,
) -> Result<(), CliError> {
    let kind = match kind {
        Some(k) => Some(MemoryKind::parse(k).ok_or_else(|| CliError::Usage(format!("unknown memory kind {k:?}")))?),
        None => None,
    };
    let mut sim = Simulation::load(snapshot)?;
    let now = sim.now();
    let weights = match top_k {
        Some(0) => return Err(CliError::Usage("--top-k must be positive".into())),
        Some(k) => sim.config().retrieval.with_k(k),
        None => sim.config().retrieval,
    };
    let llm = sim.config().backend.build(sim.config().seed)?;
    let stream = sim.stream_mut(agent)?;
    match query {
        Some(q) => {
            // scoring marks records accessed; the snapshot is never saved here
            let scored = match kind {
                Some(k) => retrieval::retrieve_where(stream, llm.as_ref(), q, &weights, now, |r| r.kind == k),
                None => retrieval::retrieve(stream, llm.as_ref(), q, &weights, now),
            }
            .map_err(runtime)?;
            writeln!(
                out,
                "{:>4} {:>6} {:<11} {:>8} {:>10} {:>9} {:>7}  text",
                "rank", "id", "kind", "recency", "importance", "relevance", "total"
            )
            .map_err(runtime)?;
            for (i, m) in scored.iter().enumerate() {
                let b = &m.breakdown;
                writeln!(
                    out,
                    "{:>4} {:>6} {:<11} {:>8.4} {:>10.4} {:>9.4} {:>7.4}  {}",
                    i + 1,
                    m.record.id,
                    m.record.kind.as_str(),
                    b.recency,
                    b.importance,
                    b.relevance,
                    b.total,
                    short(&m.record.text, 80)
                )
                .map_err(runtime)?;
            }
        }
        None => {
            for r in stream.records().iter().filter(|r| kind.is_none_or(|k| r.kind == k)) {
                let cites = if r.citations.is_empty() {
                    String::new()
                } else {
                    let ids: Vec<String> = r.citations.iter().map(u64::to_string).collect();
                    format!(" [cites {}]", ids.join(","))
                };
                writeln!(
                    out,
                    "{:>6} {:<11} {} imp={:<2} {}{}",
                    r.id,
                    r.kind.as_str(),
                    r.created_at,
                    r.importance,
                    short(&r.text, 100),
                    cites
                )
                .map_err(runtime)?;
            }
        }
    }
    Ok(())
}

fn interview(snapshot: &Path, agent: &str, persist: bool, out: &mut impl Write) -> Result<(), CliError> {
    let mut sim = Simulation::load(snapshot)?;
    let now = sim.now();
    let summary = sim.agent_summary(agent)?;
    let weights = sim.config().retrieval;
    let llm = sim.config().backend.build(sim.config().seed)?;
    let mut session = InterviewSession::new(agent, DEFAULT_BUDGET_CHARS);
    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            write!(out, "> ").map_err(runtime)?;
            out.flush().map_err(runtime)?;
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(runtime)?;
        let question = line.trim();
        if question == "/quit" {
            break;
        }
        if question.is_empty() {
            continue;
        }
        let stream = sim.stream_mut(agent)?;
        match session.ask(question, &summary, stream, llm.as_ref(), &weights, now) {
            Ok(answer) => writeln!(out, "{agent}: {answer}").map_err(runtime)?,
            Err(e) => writeln!(out, "({agent} could not answer: {e})").map_err(runtime)?,
        }
    }
    if persist {
        let stream = sim.stream_mut(agent)?;
        let ids = session.write_back(stream, llm.as_ref(), now).map_err(runtime)?;
        sim.save(snapshot)?;
        writeln!(out, "stored {} exchange(s) in {agent}'s memory", ids.len()).map_err(runtime)?;
    }
    Ok(())
}

fn reflect(snapshot: &Path, agent: &str, out: &mut impl Write) -> Result<(), CliError> {
    let mut sim = Simulation::load(snapshot)?;
    let now = sim.now();
    let weights = sim.config().retrieval.with_k(sim.config().reflection.insight_k);
    let threshold = sim.config().reflection.threshold;
    let llm = sim.config().backend.build(sim.config().seed)?;
    let stream = sim.stream_mut(agent)?;
    writeln!(
        out,
        "importance since last reflection: {} (threshold {threshold})",
        stream.importance_since_reflection()
    )
    .map_err(runtime)?;
    let result = reflection::reflect(stream, llm.as_ref(), &weights, now).map_err(runtime)?;
    for q in &result.questions {
        writeln!(out, "question: {}", q.as_str()).map_err(runtime)?;
    }
    for ins in &result.insights {
        let ev: Vec<String> = ins.evidence.iter().map(u64::to_string).collect();
        writeln!(out, "insight: {} (evidence: {})", ins.text, ev.join(", ")).map_err(runtime)?;
    }
    Ok(())
}

//! kupenctl: apply manifests to an embedded engine, inspect objects, watch
//! them converge and run scripted failure scenarios.

mod output;
mod state;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kupenstack::engine::Engine;
use kupenstack::model::manifest::{parse_manifests, ManifestError};
use kupenstack::model::{ConditionType, Kind, DEFAULT_NAMESPACE};
use kupenstack::scenario::{run_scenario, RunOptions, Scenario, ScenarioError, DEFAULT_TICKS};
use kupenstack::store::{EventType, StoreError};
use kupenstack::{ObjectKey, ResourceObject};

use state::{StateFile, DEFAULT_STATE_FILE};

pub const EXIT_GENERIC: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_NOT_FOUND: u8 = 4;

/// Ticks the engine runs after a mutating command, stopping early once
/// everything is quiescent.
const DEFAULT_SETTLE: u64 = 100;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn generic(message: impl Into<String>) -> Self {
        Self::new(EXIT_GENERIC, message)
    }
}

fn store_failure(e: StoreError) -> Failure {
    let code = match &e {
        StoreError::NotFound(_) | StoreError::NamespaceNotFound(_) => EXIT_NOT_FOUND,
        StoreError::ValidationFailed { .. } => EXIT_VALIDATION,
        _ => EXIT_GENERIC,
    };
    Failure::new(code, e.to_string())
}

fn manifest_failure(e: &ManifestError) -> Failure {
    let code = match e {
        ManifestError::Parse { .. } => EXIT_PARSE,
        ManifestError::Invalid { .. } => EXIT_VALIDATION,
    };
    Failure::new(code, e.to_string())
}

#[derive(Parser)]
#[command(name = "kupenctl", version, about = "Declarative OpenStack-as-code control plane (simulated)")]
struct Cli {
    /// Engine state file shared by successive invocations.
    #[arg(long, global = true, env = "KUPENSTACK_STATE", default_value = DEFAULT_STATE_FILE)]
    state: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Table,
    Json,
    Yaml,
}

#[derive(Subcommand)]
enum Command {
    /// Create or update objects from manifest files or directories.
    Apply {
        #[arg(short = 'f', long = "filename", required = true)]
        files: Vec<PathBuf>,
        /// Namespace for documents that do not set one.
        #[arg(short, long, default_value = DEFAULT_NAMESPACE)]
        namespace: String,
        /// Ticks to let controllers run afterwards.
        #[arg(long, default_value_t = DEFAULT_SETTLE)]
        settle: u64,
    },
    /// List objects of a kind, or show one.
    Get {
        kind: String,
        name: Option<String>,
        #[arg(short, long, default_value = DEFAULT_NAMESPACE)]
        namespace: String,
        #[arg(short = 'A', long)]
        all_namespaces: bool,
        #[arg(short, long, value_enum, default_value = "table")]
        output: OutputFormat,
    },
    /// Spec, status, conditions and recent health events of one object.
    Describe {
        kind: String,
        name: String,
        #[arg(short, long, default_value = DEFAULT_NAMESPACE)]
        namespace: String,
    },
    /// Delete one object, or every object in a manifest file.
    Delete {
        kind: Option<String>,
        name: Option<String>,
        #[arg(short = 'f', long = "filename", conflicts_with_all = ["kind", "name"])]
        files: Vec<PathBuf>,
        #[arg(short, long, default_value = DEFAULT_NAMESPACE)]
        namespace: String,
        #[arg(long, default_value_t = DEFAULT_SETTLE)]
        settle: u64,
    },
    /// Run a scenario on a fresh engine and check the invariant suite.
    RunScenario {
        #[arg(short = 'f', long = "filename")]
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TICKS)]
        ticks: u64,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the mutation log (JSON lines) here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Advance the engine and print status transitions as they commit.
    Watch {
        kind: String,
        name: Option<String>,
        #[arg(short, long, default_value = DEFAULT_NAMESPACE)]
        namespace: String,
        /// Exit 0 as soon as every watched object is Ready.
        #[arg(long)]
        until_ready: bool,
        /// Give up after this many ticks.
        #[arg(long, default_value_t = 200)]
        ticks: u64,
    },
}

fn parse_kind(s: &str) -> Result<Kind, Failure> {
    Kind::parse_loose(s).ok_or_else(|| Failure::new(EXIT_PARSE, format!("unknown kind {s:?}")))
}

fn key_for(kind: Kind, namespace: &str, name: &str) -> ObjectKey {
    ObjectKey::new(kind, kind.is_namespaced().then_some(namespace), name)
}

fn manifest_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::generic(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("yaml" | "yml" | "json")))
                .collect();
            entries.sort();
            out.extend(entries);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Failure::new(EXIT_NOT_FOUND, format!("{}: no such file", p.display())));
        }
    }
    Ok(out)
}

/// Parse every file; valid documents are returned alongside the failures
/// so callers can act on the good ones.
fn read_manifests(paths: &[PathBuf], namespace: &str) -> Result<(Vec<ResourceObject>, Vec<Failure>), Failure> {
    let mut objects = Vec::new();
    let mut failures = Vec::new();
    for file in manifest_files(paths)? {
        let text = std::fs::read_to_string(&file).map_err(|e| Failure::generic(format!("{}: {e}", file.display())))?;
        match parse_manifests(&text, &file.display().to_string(), namespace) {
            Err(e) => failures.push(manifest_failure(&e)),
            Ok(docs) => {
                for d in docs {
                    match d {
                        Ok(d) => objects.push(d.object),
                        Err(e) => failures.push(manifest_failure(&e)),
                    }
                }
            }
        }
    }
    Ok((objects, failures))
}

fn apply_order(kind: Kind) -> u8 {
    match kind {
        Kind::Namespace => 0,
        Kind::OpenStackCloud => 1,
        _ => 2,
    }
}

fn cmd_apply(state: &StateFile, files: &[PathBuf], namespace: &str, settle: u64) -> Result<(), Failure> {
    let (mut objects, mut failures) = read_manifests(files, namespace)?;
    let mut engine = state.load()?;
    objects.sort_by_key(|o| apply_order(o.kind()));
    for obj in objects {
        let key = obj.key();
        match engine.apply(obj) {
            Ok(r) => println!("{key} {r}"),
            Err(e) => failures.push(store_failure(e)),
        }
    }
    engine.run(settle);
    state.save(&engine)?;
    finish(failures)
}

/// Report every failure; the first one decides the exit code.
fn finish(failures: Vec<Failure>) -> Result<(), Failure> {
    let mut iter = failures.into_iter();
    let Some(first) = iter.next() else { return Ok(()) };
    for f in iter {
        eprintln!("error: {}", f.message);
    }
    Err(first)
}

fn cmd_get(
    state: &StateFile,
    kind: &str,
    name: Option<&str>,
    namespace: &str,
    all: bool,
    output: OutputFormat,
) -> Result<(), Failure> {
    let kind = parse_kind(kind)?;
    let engine = state.load()?;
    let store = engine.store();
    let objects = match name {
        Some(name) => vec![store.get(&key_for(kind, namespace, name)).map_err(store_failure)?],
        None => {
            let ns = (kind.is_namespaced() && !all).then_some(namespace);
            store.list(kind, ns, None).items
        }
    };
    let text = match output {
        OutputFormat::Table => output::table(&objects, engine.now(), all && kind.is_namespaced()),
        OutputFormat::Json if name.is_some() => serde_json::to_string_pretty(&objects[0]).expect("serializes") + "\n",
        OutputFormat::Json => serde_json::to_string_pretty(&serde_json::json!({ "items": objects })).expect("serializes") + "\n",
        OutputFormat::Yaml if name.is_some() => serde_yaml::to_string(&objects[0]).expect("serializes"),
        OutputFormat::Yaml => serde_yaml::to_string(&BTreeMap::from([("items", &objects)])).expect("serializes"),
    };
    print!("{text}");
    Ok(())
}

fn cmd_describe(state: &StateFile, kind: &str, name: &str, namespace: &str) -> Result<(), Failure> {
    let kind = parse_kind(kind)?;
    let engine = state.load()?;
    let obj = engine.store().get(&key_for(kind, namespace, name)).map_err(store_failure)?;
    print!("{}", output::describe(&engine, &obj));
    Ok(())
}

fn cmd_delete(
    state: &StateFile,
    target: Option<(&str, &str)>,
    files: &[PathBuf],
    namespace: &str,
    settle: u64,
) -> Result<(), Failure> {
    let mut failures = Vec::new();
    let keys = match target {
        Some((kind, name)) => vec![key_for(parse_kind(kind)?, namespace, name)],
        None if !files.is_empty() => {
            let (objects, bad) = read_manifests(files, namespace)?;
            failures.extend(bad);
            // contents before the namespaces that hold them
            let mut keys: Vec<ObjectKey> = objects.iter().map(ResourceObject::key).collect();
            keys.sort_by_key(|k| std::cmp::Reverse(apply_order(k.kind)));
            keys
        }
        None => return Err(Failure::new(EXIT_PARSE, "delete needs <kind> <name> or -f <file>")),
    };
    let mut engine = state.load()?;
    let mut started = Vec::new();
    for key in keys {
        match engine.delete(&key) {
            Ok(_) => started.push(key),
            Err(e) => failures.push(store_failure(e)),
        }
    }
    engine.run(settle);
    for key in started {
        println!("{key} {}", engine.deletion_state(&key));
    }
    state.save(&engine)?;
    finish(failures)
}

fn cmd_run_scenario(
    file: &Path,
    seed: u64,
    ticks: u64,
    report_path: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<(), Failure> {
    let scenario = Scenario::load(file).map_err(|e| match e {
        ScenarioError::Parse { .. } => Failure::new(EXIT_PARSE, e.to_string()),
        ScenarioError::Manifest(m) => manifest_failure(&m),
        ScenarioError::Engine(e) => Failure::generic(e.to_string()),
    })?;
    let run = run_scenario(
        &scenario,
        RunOptions {
            seed,
            ticks,
            ..RunOptions::default()
        },
    )
    .map_err(|e| Failure::generic(e.to_string()))?;
    let report = &run.report;
    if let Some(p) = report_path {
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        std::fs::write(p, text + "\n").map_err(|e| Failure::generic(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = log_path {
        std::fs::write(p, run.engine.sim().export_log()).map_err(|e| Failure::generic(format!("{}: {e}", p.display())))?;
    }
    println!("scenario {} seed={} ticks={}", file.display(), seed, ticks);
    for inv in &report.invariants {
        println!("  {:<4} {}", if inv.passed { "PASS" } else { "FAIL" }, inv.name);
        for v in &inv.violations {
            println!("         {v}");
        }
    }
    println!("restarts: {}", report.total_restarts);
    if !report.degraded_instances.is_empty() {
        println!("degraded instances:");
        for d in &report.degraded_instances {
            println!("  {}: {}", d.key, d.message);
        }
    }
    println!("mutation log: {} entries, digest {}", report.mutation_log.entries, report.mutation_log.digest);
    println!("report digest: {}", report.digest);
    if report.passed {
        Ok(())
    } else {
        Err(Failure::generic("invariant suite failed"))
    }
}

fn cmd_watch(
    state: &StateFile,
    kind: &str,
    name: Option<&str>,
    namespace: &str,
    until_ready: bool,
    ticks: u64,
) -> Result<(), Failure> {
    let kind = parse_kind(kind)?;
    let mut engine = state.load()?;
    let ns = kind.is_namespaced().then_some(namespace);
    let wanted = |k: &ObjectKey| k.kind == kind && k.namespace.as_deref() == ns && name.is_none_or(|n| k.name == n);
    let listed = engine.store().list(kind, ns, None);
    if let Some(n) = name {
        if !listed.items.iter().any(|o| o.metadata.name == n) {
            return Err(Failure::new(EXIT_NOT_FOUND, format!("{} not found", key_for(kind, namespace, n))));
        }
    }
    let mut last: BTreeMap<ObjectKey, String> = BTreeMap::new();
    for o in &listed.items {
        let (s, line) = output::transition_line(engine.now(), &o.key(), Some(o));
        println!("{line}");
        last.insert(o.key(), s);
    }
    let mut watch = engine
        .store()
        .watch(Some(kind), listed.revision)
        .map_err(|e| Failure::generic(e.to_string()))?;
    let all_ready = |engine: &Engine| {
        let items: Vec<_> = engine.store().list(kind, ns, None).items.into_iter().filter(|o| wanted(&o.key())).collect();
        !items.is_empty() && items.iter().all(|o| o.status.conditions().is_true(ConditionType::Ready))
    };
    let mut outcome = Ok(());
    for _ in 0..=ticks {
        if until_ready && all_ready(&engine) {
            break;
        }
        engine.step();
        let events = watch.poll().map_err(|e| Failure::generic(e.to_string()))?;
        let mut gone = false;
        for ev in events.into_iter().filter(|ev| wanted(&ev.object.key())) {
            let key = ev.object.key();
            let obj = (ev.type_ != EventType::Deleted).then_some(&ev.object);
            let (s, line) = output::transition_line(engine.now(), &key, obj);
            if last.get(&key) != Some(&s) {
                println!("{line}");
                last.insert(key, s);
            }
            gone |= obj.is_none() && name.is_some();
        }
        if gone {
            outcome = Err(Failure::new(EXIT_NOT_FOUND, "watched object was deleted"));
            break;
        }
    }
    if outcome.is_ok() && until_ready && !all_ready(&engine) {
        outcome = Err(Failure::generic(format!("not Ready after {ticks} ticks")));
    }
    state.save(&engine)?;
    outcome
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::RunScenario {
        file,
        seed,
        ticks,
        report,
        log,
    } = &cli.command
    {
        return cmd_run_scenario(file, *seed, *ticks, report.as_deref(), log.as_deref());
    }
    let state = StateFile::open(&cli.state)?;
    match &cli.command {
        Command::Apply {
            files,
            namespace,
            settle,
        } => cmd_apply(&state, files, namespace, *settle),
        Command::Get {
            kind,
            name,
            namespace,
            all_namespaces,
            output,
        } => cmd_get(&state, kind, name.as_deref(), namespace, *all_namespaces, *output),
        Command::Describe { kind, name, namespace } => cmd_describe(&state, kind, name, namespace),
        Command::Delete {
            kind,
            name,
            files,
            namespace,
            settle,
        } => {
            let target = match (kind, name) {
                (Some(k), Some(n)) => Some((k.as_str(), n.as_str())),
                (Some(_), None) => return Err(Failure::new(EXIT_PARSE, "delete needs a name")),
                _ => None,
            };
            cmd_delete(&state, target, files, namespace, *settle)
        }
        Command::Watch {
            kind,
            name,
            namespace,
            until_ready,
            ticks,
        } => cmd_watch(&state, kind, name.as_deref(), namespace, *until_ready, *ticks),
        Command::RunScenario { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}


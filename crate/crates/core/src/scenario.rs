//! Scripted runs: a YAML list of `{tick, op, args}` steps executed against a
//! fresh deterministic engine, followed by the invariant suite.
//!
//! ```yaml
//! - tick: 0
//!   op: apply
//!   args: {file: cloud.yaml}        # or {manifest: "<yaml text>"}, or inline documents
//! - tick: 30
//!   op: delete
//!   args: {kind: Instance, name: web-0, namespace: default}
//! - tick: 40
//!   op: inject
//!   args: {action: crashVM, args: {name: default/web-0}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Tick;
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::invariants::{degraded_instances, InvariantMonitor, InvariantResult};
use crate::model::manifest::{parse_manifests, ManifestError};
use crate::model::{Kind, ObjectKey, ResourceObject, DEFAULT_NAMESPACE};
use crate::runtime::{ExecutionMode, ManagerReport};
use crate::sim::FaultAction;

pub const DEFAULT_TICKS: Tick = 300;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("{0}")]
    Manifest(ManifestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawOp {
    Apply,
    Delete,
    Inject,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    tick: Tick,
    op: RawOp,
    args: serde_yaml::Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeleteArgs {
    kind: String,
    name: String,
    #[serde(default)]
    namespace: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Apply(Vec<ResourceObject>),
    Delete(ObjectKey),
    Inject(FaultAction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub tick: Tick,
    pub action: Action,
}

/// A parsed scenario. Manifests referenced by `apply` steps are loaded and
/// validated up front, so a scenario that parses can only fail at run time
/// through the engine itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string(), path.parent())
    }

    /// `base` resolves relative `file:` references.
    pub fn parse(text: &str, source_name: &str, base: Option<&Path>) -> Result<Scenario, ScenarioError> {
        let parse_err = |message: String| ScenarioError::Parse {
            source_name: source_name.to_owned(),
            message,
        };
        let raw: Vec<RawStep> = serde_yaml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let mut steps = Vec::with_capacity(raw.len());
        for (i, s) in raw.into_iter().enumerate() {
            let action = match s.op {
                RawOp::Apply => {
                    let (manifest, name) = apply_text(&s.args, base).map_err(|m| parse_err(format!("step {i}: {m}")))?;
                    let docs = parse_manifests(&manifest, &name, DEFAULT_NAMESPACE).map_err(ScenarioError::Manifest)?;
                    let objects = docs
                        .into_iter()
                        .map(|d| d.map(|d| d.object))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(ScenarioError::Manifest)?;
                    Action::Apply(objects)
                }
                RawOp::Delete => {
                    let a: DeleteArgs =
                        serde_yaml::from_value(s.args).map_err(|e| parse_err(format!("step {i}: {e}")))?;
                    let kind = Kind::parse_loose(&a.kind).ok_or_else(|| parse_err(format!("step {i}: unknown kind {:?}", a.kind)))?;
                    let ns = kind
                        .is_namespaced()
                        .then(|| a.namespace.as_deref().unwrap_or(DEFAULT_NAMESPACE));
                    Action::Delete(ObjectKey::new(kind, ns, &a.name))
                }
                RawOp::Inject => Action::Inject(
                    serde_yaml::from_value(s.args).map_err(|e| parse_err(format!("step {i}: {e}")))?,
                ),
            };
            steps.push(Step { tick: s.tick, action });
        }
        steps.sort_by_key(|s| s.tick);
        Ok(Scenario { steps })
    }
}

/// Manifest text for an apply step and the name to report errors under.
fn apply_text(args: &serde_yaml::Value, base: Option<&Path>) -> Result<(String, String), String> {
    use serde_yaml::Value;
    let field = |k: &str| args.as_mapping().and_then(|m| m.get(Value::from(k)));
    if let Some(file) = field("file") {
        let file = file.as_str().ok_or("file must be a string")?;
        let path = base.map_or_else(|| Path::new(file).to_path_buf(), |b| b.join(file));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        return Ok((text, path.display().to_string()));
    }
    if let Some(text) = field("manifest") {
        let text = text.as_str().ok_or("manifest must be a string")?;
        return Ok((text.to_owned(), "<inline>".into()));
    }
    let docs: Vec<&Value> = match args {
        Value::Sequence(items) => items.iter().collect(),
        Value::Mapping(_) => vec![args],
        _ => return Err("apply needs {file}, {manifest} or inline documents".into()),
    };
    let text = docs
        .into_iter()
        .map(|d| serde_yaml::to_string(d).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?
        .join("---\n");
    Ok((text, "<inline>".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub ticks: Tick,
    pub mode: ExecutionMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 0,
            ticks: DEFAULT_TICKS,
            mode: ExecutionMode::Deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionRecord {
    pub tick: Tick,
    pub op: String,
    pub target: String,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MutationLogSummary {
    pub entries: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DegradedInstance {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub seed: u64,
    pub ticks: Tick,
    pub passed: bool,
    pub invariants: Vec<InvariantResult>,
    pub degraded_instances: Vec<DegradedInstance>,
    /// Instance key -> restartCount.
    pub restarts: BTreeMap<String, u32>,
    pub total_restarts: u32,
    pub actions: Vec<ActionRecord>,
    pub manager: ManagerReport,
    pub mutation_log: MutationLogSummary,
    pub objects: Vec<ResourceObject>,
    /// sha256 over the canonical JSON of every other field.
    pub digest: String,
}

impl ScenarioReport {
    fn seal(mut self) -> Self {
        self.digest.clear();
        let body = serde_json::to_vec(&self).expect("report serializes");
        self.digest = format!("{:x}", Sha256::digest(&body));
        self
    }
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub engine: Engine,
}

fn execute(engine: &Engine, action: &Action, now: Tick, out: &mut Vec<ActionRecord>) {
    match action {
        Action::Apply(objects) => {
            for obj in objects {
                let result = match engine.apply(obj.clone()) {
                    Ok(r) => r.to_string(),
                    Err(e) => format!("error: {e}"),
                };
                out.push(ActionRecord {
                    tick: now,
                    op: "apply".into(),
                    target: obj.key().to_string(),
                    result,
                });
            }
        }
        Action::Delete(key) => {
            let result = match engine.delete(key) {
                Ok(r) => r.to_string(),
                Err(e) => format!("error: {e}"),
            };
            out.push(ActionRecord {
                tick: now,
                op: "delete".into(),
                target: key.to_string(),
                result,
            });
        }
        Action::Inject(fault) => {
            engine.inject(fault);
            out.push(ActionRecord {
                tick: now,
                op: "inject".into(),
                target: serde_json::to_string(fault).expect("fault serializes"),
                result: "injected".into(),
            });
        }
    }
}

/// Run `scenario` on a fresh engine for exactly `opts.ticks` ticks. Steps
/// scheduled at tick `t` execute before the controllers run at `t`.
pub fn run_scenario(scenario: &Scenario, opts: RunOptions) -> Result<ScenarioRun, ScenarioError> {
    let mut engine = Engine::new(EngineConfig {
        seed: opts.seed,
        mode: opts.mode,
        ..EngineConfig::default()
    })?;
    let start = engine.now();
    let mut monitor = InvariantMonitor::new();
    let mut actions = Vec::new();
    let mut pending = scenario.steps.iter().peekable();
    loop {
        let now = engine.now();
        while let Some(step) = pending.next_if(|s| s.tick <= now) {
            execute(&engine, &step.action, now, &mut actions);
        }
        engine.manager_mut().process_tick();
        monitor.observe(&engine);
        if now - start >= opts.ticks {
            break;
        }
        engine.manager_mut().advance();
    }
    let quiescent_at = engine.is_quiescent().then(|| engine.now());
    let manager = engine.manager().report(start, quiescent_at);
    let invariants = monitor.check(&engine);
    let objects = engine.store().list_all().items;
    let restarts: BTreeMap<String, u32> = objects
        .iter()
        .filter_map(|o| o.instance_status().map(|s| (o.key().to_string(), s.restart_count)))
        .collect();
    let report = ScenarioReport {
        seed: opts.seed,
        ticks: opts.ticks,
        passed: invariants.iter().all(|r| r.passed),
        invariants,
        degraded_instances: degraded_instances(&engine)
            .into_iter()
            .map(|(k, message)| DegradedInstance {
                key: k.to_string(),
                message,
            })
            .collect(),
        total_restarts: restarts.values().sum(),
        restarts,
        actions,
        manager,
        mutation_log: MutationLogSummary {
            entries: engine.sim().log_len(),
            digest: engine.sim().log_digest(),
        },
        objects,
        digest: String::new(),
    }
    .seal();
    Ok(ScenarioRun { report, engine })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = r#"
- tick: 0
  op: apply
  args:
    - apiVersion: kupenstack.io/v1alpha1
      kind: Image
      metadata: {name: cirros}
      spec: {sourceURI: "http://x/cirros.img", diskFormat: qcow2}
- tick: 5
  op: inject
  args: {action: crashUnit, args: {service: nova}}
- tick: 9
  op: delete
  args: {kind: image, name: cirros}
"#;

    #[test]
    fn parses_all_ops() {
        let s = Scenario::parse(SCRIPT, "t.yaml", None).unwrap();
        assert_eq!(s.steps.len(), 3);
        assert!(matches!(&s.steps[0].action, Action::Apply(o) if o.len() == 1));
        assert_eq!(
            s.steps[2].action,
            Action::Delete(ObjectKey::namespaced(Kind::Image, "default", "cirros"))
        );
    }

    #[test]
    fn bad_yaml_is_a_parse_error() {
        let err = Scenario::parse("- tick: [", "t.yaml", None).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }));
        let err = Scenario::parse("- {tick: 1, op: reboot, args: {}}", "t.yaml", None).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }));
    }

    #[test]
    fn invalid_manifest_is_reported_as_such() {
        let text = r#"
- tick: 0
  op: apply
  args:
    apiVersion: kupenstack.io/v1alpha1
    kind: Image
    metadata: {name: Bad_Name}
    spec: {sourceURI: "ftp://x", diskFormat: qcow2}
"#;
        let err = Scenario::parse(text, "t.yaml", None).unwrap_err();
        assert!(matches!(err, ScenarioError::Manifest(ManifestError::Invalid { .. })));
    }

    #[test]
    fn same_seed_same_digest() {
        let s = Scenario::parse(SCRIPT, "t.yaml", None).unwrap();
        let opts = RunOptions {
            seed: 4,
            ticks: 20,
            ..RunOptions::default()
        };
        let a = run_scenario(&s, opts).unwrap();
        let b = run_scenario(&s, opts).unwrap();
        assert_eq!(a.report.digest, b.report.digest);
        assert_eq!(a.engine.sim().export_log(), b.engine.sim().export_log());
    }
}

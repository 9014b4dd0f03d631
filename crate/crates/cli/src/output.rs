use std::fmt::Write;

use kupenstack::engine::Engine;
use kupenstack::model::{ConditionStatus, ConditionType, Kind};
use kupenstack::{ObjectKey, ResourceObject};

pub fn ready_column(obj: &ResourceObject) -> String {
    match obj.status.conditions().get(ConditionType::Ready) {
        None => "-".into(),
        Some(c) if c.status == ConditionStatus::True => "True".into(),
        Some(c) => format!("{:?} ({})", c.status, c.reason),
    }
}

/// Aligned text table. AGE is in ticks.
pub fn table(objects: &[ResourceObject], now: u64, with_namespace: bool) -> String {
    let instances = objects.iter().any(|o| o.kind() == Kind::Instance);
    let mut header = Vec::new();
    if with_namespace {
        header.push("NAMESPACE");
    }
    header.extend(["NAME", "PHASE", "READY", "AGE"]);
    if instances {
        header.push("RESTARTS");
    }
    let mut rows = vec![header.into_iter().map(str::to_owned).collect::<Vec<_>>()];
    for o in objects {
        let mut row = Vec::new();
        if with_namespace {
            row.push(o.metadata.namespace.clone().unwrap_or_default());
        }
        row.push(o.metadata.name.clone());
        let phase = if o.is_deleting() { "Deleting".into() } else { o.status.phase_str() };
        row.push(phase);
        row.push(ready_column(o));
        row.push(now.saturating_sub(o.metadata.creation_tick).to_string());
        if instances {
            row.push(o.instance_status().map_or("-".into(), |s| s.restart_count.to_string()));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        writeln!(out, "{}", line.join("   ").trim_end()).unwrap();
    }
    out
}

fn indent(text: &str, by: &str) -> String {
    text.lines().map(|l| format!("{by}{l}\n")).collect()
}

const RECENT_EVENTS: usize = 10;

pub fn describe(engine: &Engine, obj: &ResourceObject) -> String {
    let key = obj.key();
    let meta = &obj.metadata;
    let mut out = String::new();
    writeln!(out, "Name:        {}", meta.name).unwrap();
    if let Some(ns) = &meta.namespace {
        writeln!(out, "Namespace:   {ns}").unwrap();
    }
    writeln!(out, "Kind:        {}", key.kind).unwrap();
    writeln!(out, "UID:         {}", meta.uid).unwrap();
    writeln!(out, "Generation:  {}", meta.generation).unwrap();
    writeln!(out, "Age:         {} ticks", engine.now().saturating_sub(meta.creation_tick)).unwrap();
    if !meta.labels.is_empty() {
        writeln!(out, "Labels:").unwrap();
        for (k, v) in &meta.labels {
            writeln!(out, "  {k}={v}").unwrap();
        }
    }
    if !meta.annotations.is_empty() {
        writeln!(out, "Annotations:").unwrap();
        for (k, v) in &meta.annotations {
            writeln!(out, "  {k}={v}").unwrap();
        }
    }
    if !meta.finalizers.is_empty() {
        let f: Vec<&str> = meta.finalizers.iter().map(String::as_str).collect();
        writeln!(out, "Finalizers:  {}", f.join(", ")).unwrap();
    }
    if let Some(t) = meta.deletion_timestamp {
        writeln!(out, "Deleting:    since tick {t}").unwrap();
    }

    let spec = serde_yaml::to_string(&obj.spec).unwrap_or_default();
    write!(out, "Spec:\n{}", indent(&spec, "  ")).unwrap();

    let mut status = serde_json::to_value(&obj.status).unwrap_or_default();
    if let Some(m) = status.as_object_mut() {
        m.remove("conditions");
    }
    let status = serde_yaml::to_string(&status).unwrap_or_default();
    write!(out, "Status:\n{}", indent(&status, "  ")).unwrap();

    writeln!(out, "Conditions:").unwrap();
    let conditions = obj.status.conditions();
    if conditions.is_empty() {
        writeln!(out, "  <none>").unwrap();
    }
    for c in conditions.iter() {
        writeln!(
            out,
            "  {:<12} {:<7} {:<22} tick {:<5} {}",
            format!("{:?}", c.type_),
            format!("{:?}", c.status),
            c.reason,
            c.last_transition,
            c.message
        )
        .unwrap();
    }

    writeln!(out, "Health events:").unwrap();
    let events = engine.agent().events_for(&key);
    if events.is_empty() {
        writeln!(out, "  <none>").unwrap();
    }
    for e in events.iter().rev().take(RECENT_EVENTS).rev() {
        writeln!(out, "  tick {:<5} {}  {}", e.tick, e.target, e.cause).unwrap();
    }
    out
}

/// `phase, Ready=...` summary used by watch to detect transitions.
pub fn transition_line(tick: u64, key: &ObjectKey, obj: Option<&ResourceObject>) -> (String, String) {
    match obj {
        None => ("deleted".into(), format!("{tick:>5}  {key}  deleted")),
        Some(o) => {
            let phase = if o.is_deleting() { "Deleting".into() } else { o.status.phase_str() };
            let ready = ready_column(o);
            let state = format!("{phase} Ready={ready}");
            (state.clone(), format!("{tick:>5}  {key}  {state}"))
        }
    }
}

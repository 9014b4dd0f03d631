use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Tick;

/// Actor names allowed to appear in the log.
pub const ACTOR_FLEET: &str = "fleet";
pub const ACTOR_FAULTS: &str = "fault-injector";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub tick: Tick,
    pub actor: String,
    pub operation: String,
    pub target: String,
    /// `before -> after`, or a short description for creations.
    pub summary: String,
}

/// Append-only record of every simulator state change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MutationLog(Vec<Mutation>);

impl MutationLog {
    pub(crate) fn push(&mut self, tick: Tick, actor: &str, operation: &str, target: &str, summary: String) {
        self.0.push(Mutation {
            tick,
            actor: actor.to_owned(),
            operation: operation.to_owned(),
            target: target.to_owned(),
            summary,
        });
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[Mutation] {
        &self.0
    }

    pub fn since(&self, index: usize) -> &[Mutation] {
        &self.0[index.min(self.0.len())..]
    }

    /// One JSON object per line.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.0 {
            out.push_str(&serde_json::to_string(m).expect("mutation serializes"));
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the JSON-lines export.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.export_jsonl().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Tick;
use crate::model::{ObjectKey, OpenStackService};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    ControlPlane,
    Compute,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::ControlPlane => "control-plane",
            NodeRole::Compute => "compute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Capacity {
    pub vcpus: u32,
    #[serde(rename = "ramMiB")]
    pub ram_mib: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimNode {
    pub name: String,
    pub role: NodeRole,
    pub labels: BTreeMap<String, String>,
    pub healthy: bool,
    pub capacity: Capacity,
    /// When a down node comes back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down_until: Option<Tick>,
}

impl SimNode {
    pub fn new(name: &str, role: NodeRole, capacity: Capacity) -> Self {
        let mut labels = BTreeMap::new();
        labels.insert("role".to_owned(), role.as_str().to_owned());
        labels.insert("hostname".to_owned(), name.to_owned());
        SimNode {
            name: name.to_owned(),
            role,
            labels,
            healthy: true,
            capacity,
            down_until: None,
        }
    }

    pub fn with_label(mut self, k: &str, v: &str) -> Self {
        self.labels.insert(k.to_owned(), v.to_owned());
        self
    }

    pub fn matches(&self, selector: &BTreeMap<String, String>) -> bool {
        selector.iter().all(|(k, v)| self.labels.get(k) == Some(v))
    }
}

/// Three control-plane and three compute nodes with 8 vcpus each. Compute
/// nodes carry a `disk` label (ssd, ssd, hdd); none has a gpu.
pub fn default_fleet() -> Vec<SimNode> {
    let cap = Capacity {
        vcpus: 8,
        ram_mib: 16384,
    };
    let mut nodes: Vec<SimNode> = (0..3)
        .map(|i| SimNode::new(&format!("control-{i}"), NodeRole::ControlPlane, cap))
        .collect();
    for (i, disk) in ["ssd", "ssd", "hdd"].into_iter().enumerate() {
        nodes.push(SimNode::new(&format!("compute-{i}"), NodeRole::Compute, cap).with_label("disk", disk));
    }
    nodes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitState {
    Starting,
    Ready,
    Failed,
    Terminating,
}

/// One running container of an OpenStack service. Version and config hash
/// never change after creation; a change means a new unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceUnit {
    pub uid: String,
    /// Creation order; lower is older.
    pub seq: u64,
    pub owner: ObjectKey,
    pub service: OpenStackService,
    pub version: String,
    pub config_hash: String,
    pub node: String,
    pub state: UnitState,
    pub start_tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_cause: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fleet_shape() {
        let f = default_fleet();
        assert_eq!(f.len(), 6);
        assert_eq!(f.iter().filter(|n| n.role == NodeRole::Compute).count(), 3);
        assert!(f.iter().all(|n| n.capacity.vcpus == 8 && n.healthy));
        let ssd: BTreeMap<_, _> = [("disk".to_owned(), "ssd".to_owned())].into();
        assert_eq!(f.iter().filter(|n| n.matches(&ssd)).count(), 2);
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::clock::Tick;
use crate::model::{DiskFormat, Flavor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageState {
    Queued,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimImage {
    pub id: String,
    pub project_id: String,
    pub name: String,
    pub source_uri: String,
    pub disk_format: DiskFormat,
    pub state: ImageState,
    pub created_tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VmState {
    Building,
    Running,
    Failed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimVM {
    pub id: String,
    pub project_id: String,
    pub name: String,
    pub node: String,
    pub state: VmState,
    pub flavor: Flavor,
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_cause: Option<String>,
    pub created_tick: Tick,
}

impl SimVM {
    pub fn is_live(&self) -> bool {
        self.state != VmState::Deleted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimKeyPair {
    pub id: String,
    pub project_id: String,
    pub name: String,
    pub public_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimNetwork {
    pub id: String,
    pub project_id: String,
    pub name: String,
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimSubnet {
    pub id: String,
    pub project_id: String,
    pub network_id: String,
    pub name: String,
    pub cidr: Ipv4Net,
    pub pool_start: Ipv4Addr,
    pub pool_end: Ipv4Addr,
    /// Address -> owner token.
    pub allocations: BTreeMap<Ipv4Addr, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimRouter {
    pub id: String,
    pub project_id: String,
    pub name: String,
    pub external_gateway: bool,
    pub interfaces: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BootFailure {
    pub cause: String,
    /// Remaining failures; `None` is forever.
    pub remaining: Option<u32>,
}

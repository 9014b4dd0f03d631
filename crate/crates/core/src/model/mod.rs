//! Declarative resource vocabulary: kinds, metadata, specs, statuses and
//! conditions shared by every other module.

mod condition;
mod hash;
pub mod manifest;
mod types;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clock::Tick;

pub use condition::{Condition, ConditionStatus, ConditionType, Conditions};
pub use hash::hash_config;
pub use types::*;
pub use validate::{
    is_dns_label, subnet_host_range, validate, NetworkRef, ValidationResult, Violation,
};

pub const API_VERSION: &str = "kupenstack.io/v1alpha1";

/// Annotation on a Namespace recording the id of its simulated project.
pub const PROJECT_ID_ANNOTATION: &str = "kupenstack.io/project-id";
/// Annotation keys under this prefix belong to controllers and survive apply.
pub const RESERVED_ANNOTATION_PREFIX: &str = "kupenstack.io/";

pub const FINALIZER_PROJECT_DRAIN: &str = "project-drain";
pub const FINALIZER_CLOUD_TEARDOWN: &str = "cloud-teardown";
pub const FINALIZER_RESOURCE_CLEANUP: &str = "kupenstack.io/cleanup";

pub const DEFAULT_NAMESPACE: &str = "default";

/// Fixed topology: one region, one domain, one availability zone.
pub mod topology {
    pub const REGION: &str = "default";
    pub const DOMAIN: &str = "default";
    pub const AVAILABILITY_ZONE: &str = "default";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Namespace,
    OpenStackCloud,
    Image,
    KeyPair,
    Network,
    Subnet,
    Router,
    Instance,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Namespace,
        Kind::OpenStackCloud,
        Kind::Image,
        Kind::KeyPair,
        Kind::Network,
        Kind::Subnet,
        Kind::Router,
        Kind::Instance,
    ];

    pub fn is_namespaced(self) -> bool {
        !matches!(self, Kind::Namespace | Kind::OpenStackCloud)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Namespace => "Namespace",
            Kind::OpenStackCloud => "OpenStackCloud",
            Kind::Image => "Image",
            Kind::KeyPair => "KeyPair",
            Kind::Network => "Network",
            Kind::Subnet => "Subnet",
            Kind::Router => "Router",
            Kind::Instance => "Instance",
        }
    }

    /// Resolve CLI-style names: `Instance`, `instance`, `instances`, `inst`.
    pub fn parse_loose(s: &str) -> Option<Kind> {
        let lower = s.to_ascii_lowercase();
        let short = match lower.as_str() {
            "ns" => return Some(Kind::Namespace),
            "cloud" | "clouds" | "osc" => return Some(Kind::OpenStackCloud),
            "inst" | "vm" | "vms" => return Some(Kind::Instance),
            "kp" => return Some(Kind::KeyPair),
            other => other,
        };
        Kind::ALL.into_iter().find(|k| {
            let name = k.as_str().to_ascii_lowercase();
            short == name || short.strip_suffix('s') == Some(name.as_str())
        })
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown kind {s:?}"))
    }
}

/// Identity of a live object: (kind, namespace, name).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectKey {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    pub name: String,
}

impl ObjectKey {
    pub fn new(kind: Kind, namespace: Option<&str>, name: &str) -> Self {
        Self {
            kind,
            namespace: namespace.map(str::to_owned),
            name: name.to_owned(),
        }
    }

    pub fn namespaced(kind: Kind, namespace: &str, name: &str) -> Self {
        Self::new(kind, Some(namespace), name)
    }

    pub fn cluster(kind: Kind, name: &str) -> Self {
        Self::new(kind, None, name)
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.namespace {
            Some(ns) => write!(f, "{}/{}/{}", self.kind, ns, self.name),
            None => write!(f, "{}/{}", self.kind, self.name),
        }
    }
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ObjectMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub uid: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub resource_version: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub generation: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub finalizers: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deletion_timestamp: Option<Tick>,
    /// Tick at which the object was created.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub creation_tick: Tick,
}

impl ObjectMeta {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            ..Self::default()
        }
    }

    pub fn in_namespace(namespace: &str, name: &str) -> Self {
        Self {
            name: name.to_owned(),
            namespace: Some(namespace.to_owned()),
            ..Self::default()
        }
    }

    pub fn is_deleting(&self) -> bool {
        self.deletion_timestamp.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Spec {
    Namespace(NamespaceSpec),
    OpenStackCloud(OpenStackCloudSpec),
    Image(ImageSpec),
    KeyPair(KeyPairSpec),
    Network(NetworkSpec),
    Subnet(SubnetSpec),
    Router(RouterSpec),
    Instance(InstanceSpec),
}

impl Spec {
    pub fn kind(&self) -> Kind {
        match self {
            Spec::Namespace(_) => Kind::Namespace,
            Spec::OpenStackCloud(_) => Kind::OpenStackCloud,
            Spec::Image(_) => Kind::Image,
            Spec::KeyPair(_) => Kind::KeyPair,
            Spec::Network(_) => Kind::Network,
            Spec::Subnet(_) => Kind::Subnet,
            Spec::Router(_) => Kind::Router,
            Spec::Instance(_) => Kind::Instance,
        }
    }

    /// Decode a spec of the given kind from any self-describing value.
    pub fn decode<'de, D: Deserializer<'de>>(kind: Kind, de: D) -> Result<Spec, D::Error> {
        Ok(match kind {
            Kind::Namespace => Spec::Namespace(NamespaceSpec::deserialize(de)?),
            Kind::OpenStackCloud => Spec::OpenStackCloud(OpenStackCloudSpec::deserialize(de)?),
            Kind::Image => Spec::Image(ImageSpec::deserialize(de)?),
            Kind::KeyPair => Spec::KeyPair(KeyPairSpec::deserialize(de)?),
            Kind::Network => Spec::Network(NetworkSpec::deserialize(de)?),
            Kind::Subnet => Spec::Subnet(SubnetSpec::deserialize(de)?),
            Kind::Router => Spec::Router(RouterSpec::deserialize(de)?),
            Kind::Instance => Spec::Instance(InstanceSpec::deserialize(de)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Status {
    Namespace(NamespaceStatus),
    OpenStackCloud(OpenStackCloudStatus),
    Image(ImageStatus),
    Instance(InstanceStatus),
    /// Network, Subnet, Router and KeyPair.
    Resource(ResourceStatus),
}

impl Status {
    pub fn default_for(kind: Kind) -> Status {
        match kind {
            Kind::Namespace => Status::Namespace(NamespaceStatus::default()),
            Kind::OpenStackCloud => Status::OpenStackCloud(OpenStackCloudStatus::default()),
            Kind::Image => Status::Image(ImageStatus::default()),
            Kind::Instance => Status::Instance(InstanceStatus::default()),
            Kind::KeyPair | Kind::Network | Kind::Subnet | Kind::Router => {
                Status::Resource(ResourceStatus::default())
            }
        }
    }

    pub fn decode<'de, D: Deserializer<'de>>(kind: Kind, de: D) -> Result<Status, D::Error> {
        Ok(match kind {
            Kind::Namespace => Status::Namespace(NamespaceStatus::deserialize(de)?),
            Kind::OpenStackCloud => Status::OpenStackCloud(OpenStackCloudStatus::deserialize(de)?),
            Kind::Image => Status::Image(ImageStatus::deserialize(de)?),
            Kind::Instance => Status::Instance(InstanceStatus::deserialize(de)?),
            Kind::KeyPair | Kind::Network | Kind::Subnet | Kind::Router => {
                Status::Resource(ResourceStatus::deserialize(de)?)
            }
        })
    }

    pub fn conditions(&self) -> &Conditions {
        match self {
            Status::Namespace(s) => &s.conditions,
            Status::OpenStackCloud(s) => &s.conditions,
            Status::Image(s) => &s.conditions,
            Status::Instance(s) => &s.conditions,
            Status::Resource(s) => &s.conditions,
        }
    }

    pub fn conditions_mut(&mut self) -> &mut Conditions {
        match self {
            Status::Namespace(s) => &mut s.conditions,
            Status::OpenStackCloud(s) => &mut s.conditions,
            Status::Image(s) => &mut s.conditions,
            Status::Instance(s) => &mut s.conditions,
            Status::Resource(s) => &mut s.conditions,
        }
    }

    /// The id the simulated service assigned to this object, if any.
    pub fn service_assigned_id(&self) -> Option<&str> {
        match self {
            Status::Image(s) => s.image_id.as_deref(),
            Status::Instance(s) => s.instance_id.as_deref(),
            Status::Resource(s) => s.service_assigned_id.as_deref(),
            Status::Namespace(_) | Status::OpenStackCloud(_) => None,
        }
    }

    /// Short phase string for tabular output.
    pub fn phase_str(&self) -> String {
        match self {
            Status::Namespace(s) => format!("{:?}", s.phase),
            Status::OpenStackCloud(s) => {
                if s.conditions.is_true(ConditionType::Ready) {
                    "Ready".into()
                } else if s.conditions.is_true(ConditionType::Progressing) {
                    "Progressing".into()
                } else {
                    "NotReady".into()
                }
            }
            Status::Image(s) => format!("{:?}", s.phase),
            Status::Instance(s) => format!("{:?}", s.phase),
            Status::Resource(s) => format!("{:?}", s.phase),
        }
    }
}

/// Uniform envelope for every declarative resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceObject {
    pub metadata: ObjectMeta,
    pub spec: Spec,
    pub status: Status,
}

impl ResourceObject {
    pub fn new(metadata: ObjectMeta, spec: Spec) -> Self {
        let status = Status::default_for(spec.kind());
        Self {
            metadata,
            spec,
            status,
        }
    }

    pub fn kind(&self) -> Kind {
        self.spec.kind()
    }

    pub fn key(&self) -> ObjectKey {
        ObjectKey {
            kind: self.kind(),
            namespace: self.metadata.namespace.clone(),
            name: self.metadata.name.clone(),
        }
    }

    pub fn is_deleting(&self) -> bool {
        self.metadata.is_deleting()
    }

    pub fn has_finalizer(&self, f: &str) -> bool {
        self.metadata.finalizers.contains(f)
    }
}

macro_rules! typed_accessors {
    ($($spec_fn:ident, $status_fn:ident, $status_mut_fn:ident: $variant:ident => $spec:ty, $status_variant:ident => $status:ty;)*) => {
        impl ResourceObject {
            $(
                pub fn $spec_fn(&self) -> Option<&$spec> {
                    match &self.spec {
                        Spec::$variant(s) => Some(s),
                        _ => None,
                    }
                }

                pub fn $status_fn(&self) -> Option<&$status> {
                    match &self.status {
                        Status::$status_variant(s) => Some(s),
                        _ => None,
                    }
                }

                pub fn $status_mut_fn(&mut self) -> Option<&mut $status> {
                    match &mut self.status {
                        Status::$status_variant(s) => Some(s),
                        _ => None,
                    }
                }
            )*
        }
    };
}

typed_accessors! {
    namespace_spec, namespace_status, namespace_status_mut: Namespace => NamespaceSpec, Namespace => NamespaceStatus;
    cloud_spec, cloud_status, cloud_status_mut: OpenStackCloud => OpenStackCloudSpec, OpenStackCloud => OpenStackCloudStatus;
    image_spec, image_status, image_status_mut: Image => ImageSpec, Image => ImageStatus;
    instance_spec, instance_status, instance_status_mut: Instance => InstanceSpec, Instance => InstanceStatus;
    network_spec, network_status, network_status_mut: Network => NetworkSpec, Resource => ResourceStatus;
    subnet_spec, subnet_status, subnet_status_mut: Subnet => SubnetSpec, Resource => ResourceStatus;
    router_spec, router_status, router_status_mut: Router => RouterSpec, Resource => ResourceStatus;
    keypair_spec, keypair_status, keypair_status_mut: KeyPair => KeyPairSpec, Resource => ResourceStatus;
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ObjectRef<'a> {
    api_version: &'a str,
    kind: Kind,
    metadata: &'a ObjectMeta,
    spec: &'a Spec,
    status: &'a Status,
}

impl Serialize for ResourceObject {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ObjectRef {
            api_version: API_VERSION,
            kind: self.kind(),
            metadata: &self.metadata,
            spec: &self.spec,
            status: &self.status,
        }
        .serialize(serializer)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawObject {
    #[allow(dead_code)]
    api_version: String,
    kind: Kind,
    metadata: ObjectMeta,
    #[serde(default)]
    spec: serde_json::Value,
    #[serde(default)]
    status: Option<serde_json::Value>,
}

impl<'de> Deserialize<'de> for ResourceObject {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawObject::deserialize(deserializer)?;
        let spec = Spec::decode(raw.kind, raw.spec).map_err(D::Error::custom)?;
        let status = match raw.status {
            Some(v) => Status::decode(raw.kind, v).map_err(D::Error::custom)?,
            None => Status::default_for(raw.kind),
        };
        Ok(ResourceObject {
            metadata: raw.metadata,
            spec,
            status,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loose_kind_names() {
        assert_eq!(Kind::parse_loose("instances"), Some(Kind::Instance));
        assert_eq!(Kind::parse_loose("Image"), Some(Kind::Image));
        assert_eq!(Kind::parse_loose("keypairs"), Some(Kind::KeyPair));
        assert_eq!(Kind::parse_loose("openstackclouds"), Some(Kind::OpenStackCloud));
        assert_eq!(Kind::parse_loose("ns"), Some(Kind::Namespace));
        assert_eq!(Kind::parse_loose("pods"), None);
    }

    #[test]
    fn key_display() {
        let key = ObjectKey::namespaced(Kind::Image, "team-a", "cirros");
        assert_eq!(key.to_string(), "Image/team-a/cirros");
        assert_eq!(ObjectKey::cluster(Kind::Namespace, "x").to_string(), "Namespace/x");
    }
}

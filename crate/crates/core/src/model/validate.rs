//! Structural validation of resource specs. Pure: never touches the store and
//! never looks at status.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use serde::Serialize;

use super::{OpenStackService, ResourceObject, Spec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn has_violation_at(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path == path)
    }
}

impl fmt::Display for ValidationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// RFC 1123 label: lowercase alphanumerics and '-', 1..=63 chars, no leading
/// or trailing '-'.
pub fn is_dns_label(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 63
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

/// A Subnet's reference to its Network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkRef<'a> {
    pub namespace: Option<&'a str>,
    pub name: &'a str,
}

impl<'a> NetworkRef<'a> {
    pub fn parse(s: &'a str) -> Option<Self> {
        match s.split_once('/') {
            Some((ns, name)) if is_dns_label(ns) && is_dns_label(name) => Some(NetworkRef {
                namespace: Some(ns),
                name,
            }),
            None if is_dns_label(s) => Some(NetworkRef {
                namespace: None,
                name: s,
            }),
            _ => None,
        }
    }
}

/// First and last usable host addresses of `cidr`.
pub fn subnet_host_range(cidr: &Ipv4Net) -> Option<(Ipv4Addr, Ipv4Addr)> {
    let mut hosts = cidr.hosts();
    let first = hosts.next()?;
    let last = cidr.hosts().last()?;
    Some((first, last))
}

fn valid_version(v: &str) -> bool {
    semver::Version::parse(v.strip_prefix('v').unwrap_or(v)).is_ok()
}

/// Validate an object's metadata and spec.
pub fn validate(obj: &ResourceObject) -> ValidationResult {
    let mut r = ValidationResult::default();
    let kind = obj.kind();
    let meta = &obj.metadata;

    if !is_dns_label(&meta.name) {
        r.push("metadata.name", "must be a DNS label (lowercase alphanumerics and '-', at most 63 chars)");
    }
    match (&meta.namespace, kind.is_namespaced()) {
        (Some(ns), true) if !is_dns_label(ns) => {
            r.push("metadata.namespace", "must be a DNS label");
        }
        (None, true) => r.push("metadata.namespace", "required for namespaced kinds"),
        (Some(_), false) => r.push("metadata.namespace", format!("{kind} is cluster-scoped")),
        _ => {}
    }

    match &obj.spec {
        Spec::Namespace(_) | Spec::Network(_) => {}
        Spec::OpenStackCloud(spec) => {
            let mut seen = BTreeSet::new();
            for (i, svc) in spec.services.iter().enumerate() {
                if !seen.insert(svc.name) {
                    r.push(format!("spec.services[{i}].name"), format!("duplicate service {}", svc.name));
                }
                if !valid_version(&svc.version) {
                    r.push(format!("spec.services[{i}].version"), "must be a semantic version");
                }
                if svc.replicas == 0 {
                    r.push(format!("spec.services[{i}].replicas"), "must be a positive integer");
                }
                if svc.config_overrides.keys().any(|k| k.is_empty()) {
                    r.push(format!("spec.services[{i}].configOverrides"), "keys must be non-empty");
                }
            }
            let needs_keystone = seen.iter().any(|s| *s != OpenStackService::Keystone);
            if needs_keystone && !seen.contains(&OpenStackService::Keystone) {
                r.push("spec.services", "keystone required when any other service is declared");
            }
        }
        Spec::Image(spec) => {
            let scheme_ok = ["http://", "https://", "file://"]
                .iter()
                .any(|p| spec.source_uri.starts_with(p) && spec.source_uri.len() > p.len());
            if !scheme_ok {
                r.push("spec.sourceURI", "must be an http(s):// or file:// URI");
            }
        }
        Spec::KeyPair(spec) => {
            if spec.public_key.trim().is_empty() {
                r.push("spec.publicKey", "non-empty required");
            }
        }
        Spec::Subnet(spec) => {
            if NetworkRef::parse(&spec.network_ref).is_none() {
                r.push("spec.networkRef", "must be `name` or `namespace/name`");
            }
            match spec.cidr.parse::<Ipv4Net>() {
                Err(_) => r.push("spec.cidr", "must be an IPv4 CIDR"),
                Ok(net) if net.trunc() != net => {
                    r.push("spec.cidr", "host bits must be zero");
                }
                Ok(net) if net.prefix_len() > 30 => {
                    r.push("spec.cidr", "prefix too long to hold a gateway and one host");
                }
                Ok(net) => {
                    if let Some(pool) = &spec.allocation_pool {
                        let (first, last) = subnet_host_range(&net).expect("prefix <= 30");
                        match (pool.start.parse::<Ipv4Addr>(), pool.end.parse::<Ipv4Addr>()) {
                            (Ok(start), Ok(end)) => {
                                if start > end {
                                    r.push("spec.allocationPool", "start must not exceed end");
                                }
                                if start < first || end > last {
                                    r.push("spec.allocationPool", "must lie inside the CIDR host range");
                                }
                            }
                            (start, end) => {
                                if start.is_err() {
                                    r.push("spec.allocationPool.start", "must be an IPv4 address");
                                }
                                if end.is_err() {
                                    r.push("spec.allocationPool.end", "must be an IPv4 address");
                                }
                            }
                        }
                    }
                }
            }
        }
        Spec::Router(spec) => {
            let mut seen = BTreeSet::new();
            for (i, s) in spec.subnet_refs.iter().enumerate() {
                if !is_dns_label(s) {
                    r.push(format!("spec.subnetRefs[{i}]"), "must be a DNS label");
                }
                if !seen.insert(s) {
                    r.push(format!("spec.subnetRefs[{i}]"), "duplicate reference");
                }
            }
        }
        Spec::Instance(spec) => {
            let f = &spec.flavor;
            if f.vcpus == 0 {
                r.push("spec.flavor.vcpus", "must be positive");
            }
            if f.ram_mib == 0 {
                r.push("spec.flavor.ramMiB", "must be positive");
            }
            if f.disk_gib == 0 {
                r.push("spec.flavor.diskGiB", "must be positive");
            }
            if !is_dns_label(&spec.image_ref) {
                r.push("spec.imageRef", "must be a DNS label");
            }
            if let Some(kp) = &spec.key_pair_ref {
                if !is_dns_label(kp) {
                    r.push("spec.keyPairRef", "must be a DNS label");
                }
            }
            if spec.subnet_refs.is_empty() {
                r.push("spec.subnetRefs", "non-empty required");
            }
            let mut seen = BTreeSet::new();
            for (i, s) in spec.subnet_refs.iter().enumerate() {
                if !is_dns_label(s) {
                    r.push(format!("spec.subnetRefs[{i}]"), "must be a DNS label");
                }
                if !seen.insert(s) {
                    r.push(format!("spec.subnetRefs[{i}]"), "duplicate reference");
                }
            }
        }
    }
    debug_assert!(kind == obj.spec.kind());
    r
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::*;

    fn instance(subnets: &[&str]) -> ResourceObject {
        ResourceObject::new(
            ObjectMeta::in_namespace("demo", "vm-1"),
            Spec::Instance(InstanceSpec {
                flavor: Flavor {
                    vcpus: 1,
                    ram_mib: 512,
                    disk_gib: 1,
                },
                image_ref: "cirros".into(),
                key_pair_ref: None,
                subnet_refs: subnets.iter().map(|s| s.to_string()).collect(),
                node_selector: BTreeMap::new(),
            }),
        )
    }

    fn subnet(cidr: &str, pool: Option<(&str, &str)>) -> ResourceObject {
        ResourceObject::new(
            ObjectMeta::in_namespace("demo", "sn"),
            Spec::Subnet(SubnetSpec {
                network_ref: "net".into(),
                cidr: cidr.into(),
                allocation_pool: pool.map(|(s, e)| AllocationPool {
                    start: s.into(),
                    end: e.into(),
                }),
            }),
        )
    }

    fn cloud(services: &[OpenStackService]) -> ResourceObject {
        ResourceObject::new(
            ObjectMeta::named("cloud"),
            Spec::OpenStackCloud(OpenStackCloudSpec {
                services: services
                    .iter()
                    .map(|s| ServiceSpec {
                        name: *s,
                        version: "1.0.0".into(),
                        replicas: 1,
                        config_overrides: BTreeMap::new(),
                    })
                    .collect(),
            }),
        )
    }

    #[test]
    fn instance_without_subnets() {
        let r = validate(&instance(&[]));
        assert!(r.has_violation_at("spec.subnetRefs"));
        assert!(r.violations[0].message.contains("non-empty required"));
    }

    #[test]
    fn subnet_pool_inside_cidr() {
        assert!(validate(&subnet("10.0.0.0/24", Some(("10.0.0.10", "10.0.0.20")))).is_ok());
    }

    #[test]
    fn subnet_pool_outside_cidr() {
        let r = validate(&subnet("10.0.0.0/24", Some(("10.0.0.10", "10.0.1.20"))));
        assert!(r.has_violation_at("spec.allocationPool"));
        // network and broadcast addresses are not hosts
        assert!(!validate(&subnet("10.0.0.0/24", Some(("10.0.0.0", "10.0.0.5")))).is_ok());
        assert!(!validate(&subnet("10.0.0.0/24", Some(("10.0.0.5", "10.0.0.255")))).is_ok());
    }

    #[test]
    fn subnet_bad_cidrs() {
        assert!(validate(&subnet("10.0.0.0/33", None)).has_violation_at("spec.cidr"));
        assert!(validate(&subnet("10.0.0.1/24", None)).has_violation_at("spec.cidr"));
        assert!(validate(&subnet("bogus", None)).has_violation_at("spec.cidr"));
    }

    #[test]
    fn nova_requires_keystone() {
        let r = validate(&cloud(&[OpenStackService::Nova]));
        assert!(r.has_violation_at("spec.services"));
        assert!(r.to_string().contains("keystone required"));
        assert!(validate(&cloud(&[OpenStackService::Keystone, OpenStackService::Nova])).is_ok());
        assert!(validate(&cloud(&[OpenStackService::Keystone])).is_ok());
    }

    #[test]
    fn zero_replicas_rejected() {
        let mut c = cloud(&[OpenStackService::Keystone]);
        if let Spec::OpenStackCloud(s) = &mut c.spec {
            s.services[0].replicas = 0;
        }
        assert!(validate(&c).has_violation_at("spec.services[0].replicas"));
    }

    #[test]
    fn status_is_ignored() {
        let mut obj = instance(&["a"]);
        let before = validate(&obj);
        obj.instance_status_mut().unwrap().restart_count = 99;
        obj.instance_status_mut().unwrap().ip_addresses = vec!["not-an-ip".into()];
        assert_eq!(validate(&obj), before);
    }

    #[test]
    fn scope_rules() {
        let mut obj = instance(&["a"]);
        obj.metadata.namespace = None;
        assert!(validate(&obj).has_violation_at("metadata.namespace"));
        let mut ns = ResourceObject::new(ObjectMeta::named("x"), Spec::Namespace(NamespaceSpec {}));
        assert!(validate(&ns).is_ok());
        ns.metadata.namespace = Some("y".into());
        assert!(validate(&ns).has_violation_at("metadata.namespace"));
    }

    #[test]
    fn dns_labels() {
        assert!(is_dns_label("team-a"));
        assert!(is_dns_label("a"));
        assert!(!is_dns_label("Team"));
        assert!(!is_dns_label("-a"));
        assert!(!is_dns_label(&"a".repeat(64)));
        assert!(is_dns_label(&"a".repeat(63)));
    }

    #[test]
    fn network_refs() {
        assert_eq!(
            NetworkRef::parse("shared/ext"),
            Some(NetworkRef { namespace: Some("shared"), name: "ext" })
        );
        assert_eq!(NetworkRef::parse("net"), Some(NetworkRef { namespace: None, name: "net" }));
        assert_eq!(NetworkRef::parse("a/b/c"), None);
    }
}

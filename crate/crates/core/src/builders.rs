//! Shorthand constructors for objects, used by tests, benches and the
//! bundled scenarios.

use std::collections::BTreeMap;

use crate::model::{
    ContainerFormat, DiskFormat, Flavor, ImageSpec, InstanceSpec, KeyPairSpec, NamespaceSpec, NetworkSpec,
    ObjectMeta, OpenStackCloudSpec, OpenStackService, ResourceObject, RouterSpec, ServiceSpec, Spec, SubnetSpec,
};

pub fn namespace(name: &str) -> ResourceObject {
    ResourceObject::new(ObjectMeta::named(name), Spec::Namespace(NamespaceSpec {}))
}

pub fn cloud(name: &str, services: &[(OpenStackService, &str, u32)]) -> ResourceObject {
    let services = services
        .iter()
        .map(|(svc, version, replicas)| ServiceSpec {
            name: *svc,
            version: (*version).to_owned(),
            replicas: *replicas,
            config_overrides: BTreeMap::new(),
        })
        .collect();
    ResourceObject::new(ObjectMeta::named(name), Spec::OpenStackCloud(OpenStackCloudSpec { services }))
}

/// keystone x1, glance x1, nova x2, neutron x1, all at `version`.
pub fn standard_cloud(version: &str) -> ResourceObject {
    cloud(
        "openstack",
        &[
            (OpenStackService::Keystone, version, 1),
            (OpenStackService::Glance, version, 1),
            (OpenStackService::Nova, version, 2),
            (OpenStackService::Neutron, version, 1),
        ],
    )
}

pub fn image(ns: &str, name: &str) -> ResourceObject {
    ResourceObject::new(
        ObjectMeta::in_namespace(ns, name),
        Spec::Image(ImageSpec {
            source_uri: format!("http://images.local/{name}.qcow2"),
            disk_format: DiskFormat::Qcow2,
            container_format: ContainerFormat::Bare,
        }),
    )
}

pub fn keypair(ns: &str, name: &str, public_key: &str) -> ResourceObject {
    ResourceObject::new(
        ObjectMeta::in_namespace(ns, name),
        Spec::KeyPair(KeyPairSpec {
            public_key: public_key.to_owned(),
        }),
    )
}

pub fn network(ns: &str, name: &str, shared: bool) -> ResourceObject {
    ResourceObject::new(ObjectMeta::in_namespace(ns, name), Spec::Network(NetworkSpec { shared }))
}

pub fn subnet(ns: &str, name: &str, network_ref: &str, cidr: &str) -> ResourceObject {
    ResourceObject::new(
        ObjectMeta::in_namespace(ns, name),
        Spec::Subnet(SubnetSpec {
            network_ref: network_ref.to_owned(),
            cidr: cidr.to_owned(),
            allocation_pool: None,
        }),
    )
}

pub fn router(ns: &str, name: &str, subnets: &[&str]) -> ResourceObject {
    ResourceObject::new(
        ObjectMeta::in_namespace(ns, name),
        Spec::Router(RouterSpec {
            subnet_refs: subnets.iter().map(|s| (*s).to_owned()).collect(),
            external_gateway: false,
        }),
    )
}

/// 1 vcpu, 512 MiB, 1 GiB.
pub fn small_flavor() -> Flavor {
    Flavor {
        vcpus: 1,
        ram_mib: 512,
        disk_gib: 1,
    }
}

pub fn instance(ns: &str, name: &str, image_ref: &str, subnets: &[&str]) -> ResourceObject {
    ResourceObject::new(
        ObjectMeta::in_namespace(ns, name),
        Spec::Instance(InstanceSpec {
            flavor: small_flavor(),
            image_ref: image_ref.to_owned(),
            key_pair_ref: None,
            subnet_refs: subnets.iter().map(|s| (*s).to_owned()).collect(),
            node_selector: BTreeMap::new(),
        }),
    )
}

pub fn with_selector(mut obj: ResourceObject, selector: &[(&str, &str)]) -> ResourceObject {
    if let Spec::Instance(spec) = &mut obj.spec {
        spec.node_selector = selector.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect();
    }
    obj
}

/// Network `net`, subnet `subnet` (10.0.0.0/24) and image `cirros` in `ns`:
/// what an instance needs to boot.
pub fn tenant_basics(ns: &str) -> Vec<ResourceObject> {
    vec![
        network(ns, "net", false),
        subnet(ns, "subnet", "net", "10.0.0.0/24"),
        image(ns, "cirros"),
    ]
}

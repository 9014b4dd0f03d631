use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

use super::{Sim, SimError, SimNetwork, SimRouter, SimSubnet, SALT_NETWORK, SALT_ROUTER, SALT_SUBNET};
use crate::model::{subnet_host_range, OpenStackService};

const SVC: OpenStackService = OpenStackService::Neutron;

fn overlaps(a: &Ipv4Net, b: &Ipv4Net) -> bool {
    a.contains(&b.network()) || b.contains(&a.network())
}

/// Networking facade: networks, subnets with address pools, routers.
pub struct Neutron<'a>(pub(super) &'a Sim);

impl Neutron<'_> {
    pub fn create_network(&self, project_id: &str, name: &str, shared: bool) -> Result<SimNetwork, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        st.require_project(project_id)?;
        if st.networks.values().any(|n| n.project_id == project_id && n.name == name) {
            return Err(SimError::Conflict(format!("network {name} already exists")));
        }
        let (id, _) = st.fresh_id(SALT_NETWORK);
        let net = SimNetwork {
            id: id.clone(),
            project_id: project_id.to_owned(),
            name: name.to_owned(),
            shared,
        };
        st.networks.insert(id.clone(), net.clone());
        st.record(now, SVC.as_str(), "createNetwork", &id, format!("-> {name} shared={shared}"));
        Ok(net)
    }

    pub fn get_network(&self, id: &str) -> Result<SimNetwork, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.networks.get(id).cloned().ok_or_else(|| SimError::not_found("network", id))
    }

    pub fn find_network(&self, project_id: &str, name: &str) -> Result<Option<SimNetwork>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .networks
            .values()
            .find(|n| n.project_id == project_id && n.name == name)
            .cloned())
    }

    pub fn set_network_shared(&self, id: &str, shared: bool) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let n = st.networks.get_mut(id).ok_or_else(|| SimError::not_found("network", id))?;
        if n.shared == shared {
            return Ok(());
        }
        n.shared = shared;
        st.record(now, SVC.as_str(), "setNetworkShared", id, format!("{} -> {shared}", !shared));
        Ok(())
    }

    /// Fails while subnets remain on the network.
    pub fn delete_network(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        if !st.networks.contains_key(id) {
            return Err(SimError::not_found("network", id));
        }
        if let Some(s) = st.subnets.values().find(|s| s.network_id == id) {
            return Err(SimError::InUse {
                kind: "network".into(),
                id: id.to_owned(),
                by: format!("subnet {}", s.name),
            });
        }
        let net = st.networks.remove(id).expect("checked");
        st.record(now, SVC.as_str(), "deleteNetwork", id, format!("{} -> gone", net.name));
        Ok(())
    }

    /// The network must belong to the project or be shared. Without a pool
    /// the whole host range is used.
    pub fn create_subnet(
        &self,
        project_id: &str,
        network_id: &str,
        name: &str,
        cidr: Ipv4Net,
        pool: Option<(Ipv4Addr, Ipv4Addr)>,
    ) -> Result<SimSubnet, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        st.require_project(project_id)?;
        match st.networks.get(network_id) {
            Some(n) if n.project_id == project_id || n.shared => {}
            _ => return Err(SimError::not_found("network", network_id)),
        }
        if st.subnets.values().any(|s| s.project_id == project_id && s.name == name) {
            return Err(SimError::Conflict(format!("subnet {name} already exists")));
        }
        let (lo, hi) = subnet_host_range(&cidr).ok_or_else(|| SimError::Invalid(format!("{cidr} has no hosts")))?;
        let (start, end) = pool.unwrap_or((lo, hi));
        if start < lo || end > hi || start > end {
            return Err(SimError::Invalid(format!("pool {start}-{end} outside {cidr}")));
        }
        let (id, _) = st.fresh_id(SALT_SUBNET);
        let subnet = SimSubnet {
            id: id.clone(),
            project_id: project_id.to_owned(),
            network_id: network_id.to_owned(),
            name: name.to_owned(),
            cidr,
            pool_start: start,
            pool_end: end,
            allocations: BTreeMap::new(),
        };
        st.subnets.insert(id.clone(), subnet.clone());
        st.record(now, SVC.as_str(), "createSubnet", &id, format!("-> {name} {cidr}"));
        Ok(subnet)
    }

    pub fn get_subnet(&self, id: &str) -> Result<SimSubnet, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.subnets.get(id).cloned().ok_or_else(|| SimError::not_found("subnet", id))
    }

    pub fn find_subnet(&self, project_id: &str, name: &str) -> Result<Option<SimSubnet>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .subnets
            .values()
            .find(|s| s.project_id == project_id && s.name == name)
            .cloned())
    }

    /// Fails while addresses are allocated or a router is attached.
    pub fn delete_subnet(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let subnet = st.subnets.get(id).ok_or_else(|| SimError::not_found("subnet", id))?;
        let by = if let Some(owner) = subnet.allocations.values().next() {
            Some(format!("address held by {owner}"))
        } else {
            st.routers
                .values()
                .find(|r| r.interfaces.contains(id))
                .map(|r| format!("router {}", r.name))
        };
        if let Some(by) = by {
            return Err(SimError::InUse {
                kind: "subnet".into(),
                id: id.to_owned(),
                by,
            });
        }
        let s = st.subnets.remove(id).expect("checked");
        st.record(now, SVC.as_str(), "deleteSubnet", id, format!("{} -> gone", s.name));
        Ok(())
    }

    /// Lowest free address in the pool. Repeated calls for the same owner
    /// return the address it already holds.
    pub fn allocate_ip(&self, subnet_id: &str, owner: &str) -> Result<Ipv4Addr, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let subnet = st.subnets.get_mut(subnet_id).ok_or_else(|| SimError::not_found("subnet", subnet_id))?;
        if let Some((addr, _)) = subnet.allocations.iter().find(|(_, o)| *o == owner) {
            return Ok(*addr);
        }
        let (start, end) = (u32::from(subnet.pool_start), u32::from(subnet.pool_end));
        let addr = (start..=end)
            .map(Ipv4Addr::from)
            .find(|a| !subnet.allocations.contains_key(a))
            .ok_or_else(|| SimError::QuotaExceeded(format!("subnet {} has no free addresses", subnet.name)))?;
        subnet.allocations.insert(addr, owner.to_owned());
        st.record(now, SVC.as_str(), "allocateIP", subnet_id, format!("{addr} free -> {owner}"));
        Ok(addr)
    }

    pub fn release_ip(&self, subnet_id: &str, addr: Ipv4Addr) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let subnet = st.subnets.get_mut(subnet_id).ok_or_else(|| SimError::not_found("subnet", subnet_id))?;
        let owner = subnet
            .allocations
            .remove(&addr)
            .ok_or_else(|| SimError::not_found("address", &addr.to_string()))?;
        st.record(now, SVC.as_str(), "releaseIP", subnet_id, format!("{addr} {owner} -> free"));
        Ok(())
    }

    /// Release whatever `owner` holds on the subnet. No-op when nothing is held.
    pub fn release_owner(&self, subnet_id: &str, owner: &str) -> Result<(), SimError> {
        let held = {
            let now = self.0.now();
            let st = self.0.lock();
            st.require(SVC, now)?;
            let subnet = st.subnets.get(subnet_id).ok_or_else(|| SimError::not_found("subnet", subnet_id))?;
            subnet
                .allocations
                .iter()
                .filter(|(_, o)| *o == owner)
                .map(|(a, _)| *a)
                .collect::<Vec<_>>()
        };
        for addr in held {
            self.release_ip(subnet_id, addr)?;
        }
        Ok(())
    }

    /// Every (subnet id, address) held by `owner`.
    pub fn addresses_of(&self, owner: &str) -> Result<Vec<(String, Ipv4Addr)>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .subnets
            .values()
            .flat_map(|s| {
                s.allocations
                    .iter()
                    .filter(|(_, o)| *o == owner)
                    .map(|(a, _)| (s.id.clone(), *a))
            })
            .collect())
    }

    pub fn create_router(&self, project_id: &str, name: &str, external_gateway: bool) -> Result<SimRouter, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        st.require_project(project_id)?;
        if st.routers.values().any(|r| r.project_id == project_id && r.name == name) {
            return Err(SimError::Conflict(format!("router {name} already exists")));
        }
        let (id, _) = st.fresh_id(SALT_ROUTER);
        let router = SimRouter {
            id: id.clone(),
            project_id: project_id.to_owned(),
            name: name.to_owned(),
            external_gateway,
            interfaces: BTreeSet::new(),
        };
        st.routers.insert(id.clone(), router.clone());
        st.record(now, SVC.as_str(), "createRouter", &id, format!("-> {name} gateway={external_gateway}"));
        Ok(router)
    }

    pub fn get_router(&self, id: &str) -> Result<SimRouter, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.routers.get(id).cloned().ok_or_else(|| SimError::not_found("router", id))
    }

    pub fn find_router(&self, project_id: &str, name: &str) -> Result<Option<SimRouter>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .routers
            .values()
            .find(|r| r.project_id == project_id && r.name == name)
            .cloned())
    }

    pub fn set_router_gateway(&self, id: &str, external_gateway: bool) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let r = st.routers.get_mut(id).ok_or_else(|| SimError::not_found("router", id))?;
        if r.external_gateway == external_gateway {
            return Ok(());
        }
        r.external_gateway = external_gateway;
        st.record(
            now,
            SVC.as_str(),
            "setRouterGateway",
            id,
            format!("{} -> {external_gateway}", !external_gateway),
        );
        Ok(())
    }

    /// Attach a subnet. Rejected when its CIDR overlaps one already attached.
    pub fn add_interface(&self, router_id: &str, subnet_id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let cidr = st
            .subnets
            .get(subnet_id)
            .ok_or_else(|| SimError::not_found("subnet", subnet_id))?
            .cidr;
        let router = st.routers.get(router_id).ok_or_else(|| SimError::not_found("router", router_id))?;
        if router.interfaces.contains(subnet_id) {
            return Ok(());
        }
        if let Some(clash) = router
            .interfaces
            .iter()
            .filter_map(|s| st.subnets.get(s))
            .find(|s| overlaps(&s.cidr, &cidr))
        {
            return Err(SimError::Conflict(format!("{cidr} overlaps attached subnet {} ({})", clash.name, clash.cidr)));
        }
        st.routers.get_mut(router_id).expect("checked").interfaces.insert(subnet_id.to_owned());
        st.record(now, SVC.as_str(), "addRouterInterface", router_id, format!("+ {subnet_id}"));
        Ok(())
    }

    pub fn remove_interface(&self, router_id: &str, subnet_id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let router = st.routers.get_mut(router_id).ok_or_else(|| SimError::not_found("router", router_id))?;
        if !router.interfaces.remove(subnet_id) {
            return Ok(());
        }
        st.record(now, SVC.as_str(), "removeRouterInterface", router_id, format!("- {subnet_id}"));
        Ok(())
    }

    /// Routers attached to a subnet.
    pub fn routers_on(&self, subnet_id: &str) -> Result<Vec<SimRouter>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .routers
            .values()
            .filter(|r| r.interfaces.contains(subnet_id))
            .cloned()
            .collect())
    }

    /// Fails while interfaces remain attached.
    pub fn delete_router(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let r = st.routers.get(id).ok_or_else(|| SimError::not_found("router", id))?;
        if let Some(s) = r.interfaces.iter().next() {
            return Err(SimError::InUse {
                kind: "router".into(),
                id: id.to_owned(),
                by: format!("interface on subnet {s}"),
            });
        }
        let r = st.routers.remove(id).expect("checked");
        st.record(now, SVC.as_str(), "deleteRouter", id, format!("{} -> gone", r.name));
        Ok(())
    }
}

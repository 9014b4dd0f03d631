use std::collections::BTreeMap;

use super::{NodeRole, Sim, SimError, SimKeyPair, SimVM, VmState, SALT_KEYPAIR, SALT_VM};
use crate::model::{Flavor, OpenStackService};

const SVC: OpenStackService = OpenStackService::Nova;

/// Host-aggregate style placement: node labels that must all match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlacementConstraint {
    pub node_selector: BTreeMap<String, String>,
}

/// Compute facade: VMs and keypairs.
pub struct Nova<'a>(pub(super) &'a Sim);

impl Nova<'_> {
    /// Schedule and start building a VM. Candidates are healthy compute nodes
    /// matching the selector with room for the flavor; the one hosting the
    /// fewest VMs wins, ties by node name.
    pub fn create_vm(
        &self,
        project_id: &str,
        name: &str,
        flavor: Flavor,
        image_id: &str,
        key_pair_id: Option<&str>,
        placement: &PlacementConstraint,
    ) -> Result<SimVM, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        st.require_project(project_id)?;
        if !st.images.contains_key(image_id) {
            return Err(SimError::not_found("image", image_id));
        }
        if let Some(kp) = key_pair_id {
            if !st.keypairs.contains_key(kp) {
                return Err(SimError::not_found("keypair", kp));
            }
        }
        if st.vms.values().any(|v| v.is_live() && v.project_id == project_id && v.name == name) {
            return Err(SimError::Conflict(format!("vm {name} already exists")));
        }
        let matching: Vec<_> = st
            .nodes
            .values()
            .filter(|n| n.role == NodeRole::Compute && n.healthy && n.matches(&placement.node_selector))
            .collect();
        if matching.is_empty() {
            return Err(SimError::NoValidHost(format!(
                "no healthy compute node matches selector {:?}",
                placement.node_selector
            )));
        }
        let node = matching
            .iter()
            .filter(|n| {
                let used = st.node_usage(&n.name);
                used.vcpus + flavor.vcpus <= n.capacity.vcpus && used.ram_mib + flavor.ram_mib <= n.capacity.ram_mib
            })
            .min_by_key(|n| {
                let count = st.vms.values().filter(|v| v.is_live() && v.node == n.name).count();
                (count, n.name.clone())
            })
            .map(|n| n.name.clone())
            .ok_or_else(|| {
                SimError::QuotaExceeded(format!(
                    "no matching compute node has room for {} vcpus / {} MiB",
                    flavor.vcpus, flavor.ram_mib
                ))
            })?;
        let (id, _) = st.fresh_id(SALT_VM);
        let vm = SimVM {
            id: id.clone(),
            project_id: project_id.to_owned(),
            name: name.to_owned(),
            node: node.clone(),
            state: VmState::Building,
            flavor,
            image_id: image_id.to_owned(),
            key_pair_id: key_pair_id.map(str::to_owned),
            failure_cause: None,
            created_tick: now,
        };
        st.vms.insert(id.clone(), vm.clone());
        st.record(now, SVC.as_str(), "createVM", &id, format!("-> Building {name} on {node}"));
        Ok(vm)
    }

    /// Deleted VMs stay visible as tombstones.
    pub fn get_vm(&self, id: &str) -> Result<SimVM, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.vms.get(id).cloned().ok_or_else(|| SimError::not_found("vm", id))
    }

    /// The live VM with this name in the project, if any.
    pub fn find_vm(&self, project_id: &str, name: &str) -> Result<Option<SimVM>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .vms
            .values()
            .find(|v| v.is_live() && v.project_id == project_id && v.name == name)
            .cloned())
    }

    pub fn delete_vm(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let vm = st.vms.get_mut(id).ok_or_else(|| SimError::not_found("vm", id))?;
        if !vm.is_live() {
            return Err(SimError::not_found("vm", id));
        }
        let before = vm.state;
        vm.state = VmState::Deleted;
        st.record(now, SVC.as_str(), "deleteVM", id, format!("{before:?} -> Deleted"));
        Ok(())
    }

    pub fn create_keypair(&self, project_id: &str, name: &str, public_key: &str) -> Result<SimKeyPair, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        st.require_project(project_id)?;
        if st.keypairs.values().any(|k| k.project_id == project_id && k.name == name) {
            return Err(SimError::Conflict(format!("keypair {name} already exists")));
        }
        let (id, _) = st.fresh_id(SALT_KEYPAIR);
        let kp = SimKeyPair {
            id: id.clone(),
            project_id: project_id.to_owned(),
            name: name.to_owned(),
            public_key: public_key.to_owned(),
        };
        st.keypairs.insert(id.clone(), kp.clone());
        st.record(now, SVC.as_str(), "createKeyPair", &id, format!("-> {name}"));
        Ok(kp)
    }

    pub fn get_keypair(&self, id: &str) -> Result<SimKeyPair, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.keypairs.get(id).cloned().ok_or_else(|| SimError::not_found("keypair", id))
    }

    pub fn find_keypair(&self, project_id: &str, name: &str) -> Result<Option<SimKeyPair>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .keypairs
            .values()
            .find(|k| k.project_id == project_id && k.name == name)
            .cloned())
    }

    pub fn delete_keypair(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let kp = st.keypairs.remove(id).ok_or_else(|| SimError::not_found("keypair", id))?;
        st.record(now, SVC.as_str(), "deleteKeyPair", id, format!("{} -> gone", kp.name));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::ready_sim;
    use super::super::{FaultAction, VmTarget};
    use super::*;
    use crate::clock::Clock;
    use crate::model::{ContainerFormat, DiskFormat, ImageSpec};
    use crate::sim::SimConfig;

    const SMALL: Flavor = Flavor {
        vcpus: 2,
        ram_mib: 1024,
        disk_gib: 10,
    };

    fn setup() -> (Clock, Sim, String, String) {
        let (clock, sim) = ready_sim();
        let p = sim.keystone().create_project("a").unwrap();
        let spec = ImageSpec {
            source_uri: "file:///cirros".into(),
            disk_format: DiskFormat::Raw,
            container_format: ContainerFormat::Bare,
        };
        let img = sim.glance().create_image(&p.id, "cirros", &spec).unwrap();
        (clock, sim, p.id, img.id)
    }

    #[test]
    fn no_ready_nova_is_unavailable() {
        let sim = Sim::new(Clock::new(), SimConfig::default());
        let err = sim
            .nova()
            .create_vm("p", "vm", SMALL, "img", None, &PlacementConstraint::default())
            .unwrap_err();
        assert!(matches!(err, SimError::ServiceUnavailable(_)));
    }

    #[test]
    fn vm_runs_after_boot_latency() {
        let (clock, sim, p, img) = setup();
        let vm = sim
            .nova()
            .create_vm(&p, "a/web", SMALL, &img, None, &PlacementConstraint::default())
            .unwrap();
        assert_eq!(vm.state, VmState::Building);
        assert!(vm.node.starts_with("compute-"));
        for _ in 0..2 {
            sim.tick(clock.advance());
            assert_eq!(sim.nova().get_vm(&vm.id).unwrap().state, VmState::Building);
        }
        sim.tick(clock.advance());
        assert_eq!(sim.nova().get_vm(&vm.id).unwrap().state, VmState::Running);
    }

    #[test]
    fn spreads_then_fills_then_quota() {
        let (_, sim, p, img) = setup();
        let nova = sim.nova();
        let big = Flavor {
            vcpus: 8,
            ram_mib: 1024,
            disk_gib: 1,
        };
        let nodes: Vec<_> = (0..3)
            .map(|i| {
                nova.create_vm(&p, &format!("a/vm{i}"), big, &img, None, &PlacementConstraint::default())
                    .unwrap()
                    .node
            })
            .collect();
        assert_eq!(nodes, vec!["compute-0", "compute-1", "compute-2"]);
        let err = nova
            .create_vm(&p, "a/vm3", SMALL, &img, None, &PlacementConstraint::default())
            .unwrap_err();
        assert_eq!(err.reason(), "QuotaExceeded");
    }

    #[test]
    fn selector_filters_nodes() {
        let (_, sim, p, img) = setup();
        let hdd = PlacementConstraint {
            node_selector: [("disk".to_owned(), "hdd".to_owned())].into(),
        };
        let vm = sim.nova().create_vm(&p, "a/x", SMALL, &img, None, &hdd).unwrap();
        assert_eq!(vm.node, "compute-2");
        let gpu = PlacementConstraint {
            node_selector: [("gpu".to_owned(), "true".to_owned())].into(),
        };
        let err = sim.nova().create_vm(&p, "a/y", SMALL, &img, None, &gpu).unwrap_err();
        assert_eq!(err.reason(), "NoValidHost");
    }

    #[test]
    fn crash_and_delete() {
        let (clock, sim, p, img) = setup();
        let vm = sim
            .nova()
            .create_vm(&p, "a/web", SMALL, &img, None, &PlacementConstraint::default())
            .unwrap();
        for _ in 0..3 {
            sim.tick(clock.advance());
        }
        sim.inject(&FaultAction::CrashVm(VmTarget {
            id: Some(vm.id.clone()),
            name: None,
        }));
        let got = sim.nova().get_vm(&vm.id).unwrap();
        assert_eq!(got.state, VmState::Failed);
        assert_eq!(got.failure_cause.as_deref(), Some("injected crash"));
        sim.nova().delete_vm(&vm.id).unwrap();
        assert_eq!(sim.nova().get_vm(&vm.id).unwrap().state, VmState::Deleted);
        assert_eq!(sim.nova().find_vm(&p, "a/web").unwrap(), None);
        assert_eq!(sim.state().node_usage(&vm.node).vcpus, 0);
    }

    #[test]
    fn fail_boot_counts_down() {
        let (clock, sim, p, img) = setup();
        sim.inject(&FaultAction::FailBoot {
            name: "a/bad".into(),
            cause: "disk corrupt".into(),
            times: Some(1),
        });
        let nova = sim.nova();
        let first = nova
            .create_vm(&p, "a/bad", SMALL, &img, None, &PlacementConstraint::default())
            .unwrap();
        for _ in 0..3 {
            sim.tick(clock.advance());
        }
        let got = nova.get_vm(&first.id).unwrap();
        assert_eq!((got.state, got.failure_cause.as_deref()), (VmState::Failed, Some("disk corrupt")));
        nova.delete_vm(&first.id).unwrap();
        let second = nova
            .create_vm(&p, "a/bad", SMALL, &img, None, &PlacementConstraint::default())
            .unwrap();
        for _ in 0..3 {
            sim.tick(clock.advance());
        }
        assert_eq!(nova.get_vm(&second.id).unwrap().state, VmState::Running);
    }

    #[test]
    fn keypairs() {
        let (_, sim, p, _) = setup();
        let kp = sim.nova().create_keypair(&p, "k", "ssh-ed25519 AAAA").unwrap();
        assert_eq!(sim.nova().find_keypair(&p, "k").unwrap(), Some(kp.clone()));
        sim.nova().delete_keypair(&kp.id).unwrap();
        assert!(sim.nova().get_keypair(&kp.id).unwrap_err().is_not_found());
    }
}

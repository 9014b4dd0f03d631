use super::{Project, Sim, SimError, SALT_PROJECT};
use crate::model::OpenStackService;

const SVC: OpenStackService = OpenStackService::Keystone;

/// Identity facade: projects.
pub struct Keystone<'a>(pub(super) &'a Sim);

impl Keystone<'_> {
    pub fn create_project(&self, name: &str) -> Result<Project, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        if st.projects.values().any(|p| p.name == name) {
            return Err(SimError::Conflict(format!("project {name} already exists")));
        }
        let (id, _) = st.fresh_id(SALT_PROJECT);
        let p = Project {
            id: id.clone(),
            name: name.to_owned(),
        };
        st.projects.insert(id.clone(), p.clone());
        st.record(now, SVC.as_str(), "createProject", &id, format!("-> {name}"));
        Ok(p)
    }

    pub fn get_project(&self, id: &str) -> Result<Project, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.projects.get(id).cloned().ok_or_else(|| SimError::not_found("project", id))
    }

    pub fn find_project(&self, name: &str) -> Result<Option<Project>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st.projects.values().find(|p| p.name == name).cloned())
    }

    /// Fails with `ProjectNotEmpty` while any resource still lives in it.
    pub fn delete_project(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        if !st.projects.contains_key(id) {
            return Err(SimError::not_found("project", id));
        }
        let owned = st.images.values().any(|x| x.project_id == id)
            || st.vms.values().any(|x| x.is_live() && x.project_id == id)
            || st.keypairs.values().any(|x| x.project_id == id)
            || st.networks.values().any(|x| x.project_id == id)
            || st.subnets.values().any(|x| x.project_id == id)
            || st.routers.values().any(|x| x.project_id == id);
        if owned {
            return Err(SimError::ProjectNotEmpty(id.to_owned()));
        }
        let p = st.projects.remove(id).expect("checked");
        st.record(now, SVC.as_str(), "deleteProject", id, format!("{} -> gone", p.name));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::ready_sim;
    use super::*;
    use crate::clock::Clock;
    use crate::sim::SimConfig;

    #[test]
    fn needs_ready_keystone() {
        let sim = Sim::new(Clock::new(), SimConfig::default());
        assert_eq!(
            sim.keystone().create_project("a"),
            Err(SimError::ServiceUnavailable(SVC))
        );
    }

    #[test]
    fn create_find_delete() {
        let (_, sim) = ready_sim();
        let k = sim.keystone();
        let p = k.create_project("team-a").unwrap();
        assert_eq!(k.find_project("team-a").unwrap(), Some(p.clone()));
        assert!(matches!(k.create_project("team-a"), Err(SimError::Conflict(_))));
        k.delete_project(&p.id).unwrap();
        assert!(k.get_project(&p.id).unwrap_err().is_not_found());
    }

    #[test]
    fn non_empty_project_not_deleted() {
        let (_, sim) = ready_sim();
        let p = sim.keystone().create_project("a").unwrap();
        sim.neutron().create_network(&p.id, "net", false).unwrap();
        assert_eq!(
            sim.keystone().delete_project(&p.id),
            Err(SimError::ProjectNotEmpty(p.id.clone()))
        );
    }
}

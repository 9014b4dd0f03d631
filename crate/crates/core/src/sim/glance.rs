use super::{ImageState, Sim, SimError, SimImage, SALT_IMAGE};
use crate::model::{ImageSpec, OpenStackService};

const SVC: OpenStackService = OpenStackService::Glance;

/// Image facade. Images are queued on creation and become active after the
/// import latency.
pub struct Glance<'a>(pub(super) &'a Sim);

impl Glance<'_> {
    pub fn create_image(&self, project_id: &str, name: &str, spec: &ImageSpec) -> Result<SimImage, SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        st.require_project(project_id)?;
        if st.images.values().any(|i| i.project_id == project_id && i.name == name) {
            return Err(SimError::Conflict(format!("image {name} already exists")));
        }
        let (id, _) = st.fresh_id(SALT_IMAGE);
        let img = SimImage {
            id: id.clone(),
            project_id: project_id.to_owned(),
            name: name.to_owned(),
            source_uri: spec.source_uri.clone(),
            disk_format: spec.disk_format,
            state: ImageState::Queued,
            created_tick: now,
        };
        st.images.insert(id.clone(), img.clone());
        st.record(now, SVC.as_str(), "createImage", &id, format!("-> Queued {name}"));
        Ok(img)
    }

    pub fn get_image(&self, id: &str) -> Result<SimImage, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        st.images.get(id).cloned().ok_or_else(|| SimError::not_found("image", id))
    }

    pub fn find_image(&self, project_id: &str, name: &str) -> Result<Option<SimImage>, SimError> {
        let now = self.0.now();
        let st = self.0.lock();
        st.require(SVC, now)?;
        Ok(st
            .images
            .values()
            .find(|i| i.project_id == project_id && i.name == name)
            .cloned())
    }

    pub fn delete_image(&self, id: &str) -> Result<(), SimError> {
        let now = self.0.now();
        let mut st = self.0.lock();
        st.require(SVC, now)?;
        let img = st.images.remove(id).ok_or_else(|| SimError::not_found("image", id))?;
        st.record(now, SVC.as_str(), "deleteImage", id, format!("{:?} -> gone", img.state));
        Ok(())
    }
}

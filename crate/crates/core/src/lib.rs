//! Declarative OpenStack-as-code control plane.
//!
//! Custom resources describe OpenStack services and workloads; level-triggered
//! controllers converge a simulated node fleet and simulated OpenStack
//! services towards them, replacing service units immutably and self-healing
//! failed VMs.

pub mod builders;
pub mod clock;
pub mod controllers;
pub mod engine;
pub mod invariants;
pub mod ids;
pub mod model;
pub mod runtime;
pub mod scenario;
pub mod sim;
pub mod store;

pub use clock::{Clock, Tick};
pub use model::{Kind, ObjectKey, ObjectMeta, ResourceObject, Spec, Status};

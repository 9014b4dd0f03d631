use serde::{Deserialize, Serialize};

use crate::clock::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConditionType {
    Ready,
    Progressing,
    Degraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionStatus {
    True,
    False,
    Unknown,
}

impl From<bool> for ConditionStatus {
    fn from(b: bool) -> Self {
        if b {
            ConditionStatus::True
        } else {
            ConditionStatus::False
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Condition {
    #[serde(rename = "type")]
    pub type_: ConditionType,
    pub status: ConditionStatus,
    pub reason: String,
    #[serde(default)]
    pub message: String,
    pub observed_generation: u64,
    pub last_transition: Tick,
}

/// Condition list holding at most one entry per [`ConditionType`], kept in
/// type order so serialization is canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Conditions(Vec<Condition>);

impl Conditions {
    pub fn get(&self, type_: ConditionType) -> Option<&Condition> {
        self.0.iter().find(|c| c.type_ == type_)
    }

    pub fn is_true(&self, type_: ConditionType) -> bool {
        self.get(type_).is_some_and(|c| c.status == ConditionStatus::True)
    }

    pub fn reason(&self, type_: ConditionType) -> Option<&str> {
        self.get(type_).map(|c| c.reason.as_str())
    }

    /// Insert or replace the condition of `type_`. `last_transition` moves
    /// only when the status flips.
    pub fn set(
        &mut self,
        type_: ConditionType,
        status: ConditionStatus,
        reason: impl Into<String>,
        message: impl Into<String>,
        observed_generation: u64,
        now: Tick,
    ) {
        let reason = reason.into();
        let message = message.into();
        match self.0.iter_mut().find(|c| c.type_ == type_) {
            Some(existing) => {
                if existing.status != status {
                    existing.last_transition = now;
                }
                existing.status = status;
                existing.reason = reason;
                existing.message = message;
                existing.observed_generation = observed_generation;
            }
            None => {
                self.0.push(Condition {
                    type_,
                    status,
                    reason,
                    message,
                    observed_generation,
                    last_transition: now,
                });
                self.0.sort_by_key(|c| c.type_);
            }
        }
    }

    pub fn remove(&mut self, type_: ConditionType) {
        self.0.retain(|c| c.type_ != type_);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Condition> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_condition_per_type() {
        let mut c = Conditions::default();
        c.set(ConditionType::Ready, ConditionStatus::False, "Pending", "", 1, 0);
        c.set(ConditionType::Degraded, ConditionStatus::False, "Ok", "", 1, 0);
        c.set(ConditionType::Ready, ConditionStatus::True, "Ok", "", 1, 5);
        assert_eq!(c.len(), 2);
        assert!(c.is_true(ConditionType::Ready));
        assert_eq!(c.get(ConditionType::Ready).unwrap().last_transition, 5);
        // type order is canonical
        let order: Vec<_> = c.iter().map(|c| c.type_).collect();
        assert_eq!(order, vec![ConditionType::Ready, ConditionType::Degraded]);
    }

    #[test]
    fn transition_tick_sticks_when_status_unchanged() {
        let mut c = Conditions::default();
        c.set(ConditionType::Ready, ConditionStatus::True, "Ok", "", 1, 3);
        c.set(ConditionType::Ready, ConditionStatus::True, "StillOk", "", 2, 9);
        let ready = c.get(ConditionType::Ready).unwrap();
        assert_eq!(ready.last_transition, 3);
        assert_eq!(ready.reason, "StillOk");
    }
}

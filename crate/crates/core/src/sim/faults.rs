use serde::{Deserialize, Serialize};

use crate::clock::Tick;
use crate::model::OpenStackService;

/// Picks a VM by id or by name; with neither set a running VM is chosen at
/// random from the seeded stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VmTarget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// `namespace/name` of the owning Instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct UnitTarget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// Restricts a random pick to one service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<OpenStackService>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "args", rename_all = "camelCase")]
pub enum FaultAction {
    #[serde(rename = "crashVM")]
    CrashVm(VmTarget),
    CrashUnit(UnitTarget),
    ApiErrorBurst {
        service: OpenStackService,
        ticks: Tick,
    },
    NodeDown {
        name: String,
        ticks: Tick,
    },
    /// Every VM booted under `name` fails at the end of its boot, `times`
    /// times or forever.
    FailBoot {
        name: String,
        cause: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        times: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub tick: Tick,
    #[serde(flatten)]
    pub action: FaultAction,
}

/// Parse a YAML list of `{tick, action, args}` entries.
pub fn parse_schedule(text: &str) -> Result<Vec<ScheduledFault>, serde_yaml::Error> {
    let mut list: Vec<ScheduledFault> = serde_yaml::from_str(text)?;
    list.sort_by_key(|f| f.tick);
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_action() {
        let text = r#"
- tick: 40
  action: crashVM
  args: {name: default/web-0}
- tick: 10
  action: crashUnit
  args: {service: nova}
- tick: 12
  action: apiErrorBurst
  args: {service: glance, ticks: 5}
- tick: 20
  action: nodeDown
  args: {name: compute-1, ticks: 10}
- tick: 0
  action: failBoot
  args: {name: default/bad, cause: "kernel panic"}
- tick: 41
  action: crashVM
  args: {}
"#;
        let s = parse_schedule(text).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[0].tick, 0);
        assert!(matches!(&s[0].action, FaultAction::FailBoot { times: None, .. }));
        assert_eq!(
            s[1].action,
            FaultAction::CrashUnit(UnitTarget {
                id: None,
                service: Some(OpenStackService::Nova)
            })
        );
        assert_eq!(s[5].action, FaultAction::CrashVm(VmTarget::default()));
    }

    #[test]
    fn rejects_unknown_action() {
        assert!(parse_schedule("- {tick: 1, action: meteor, args: {}}").is_err());
    }

    #[test]
    fn round_trips() {
        let f = ScheduledFault {
            tick: 3,
            action: FaultAction::NodeDown {
                name: "compute-0".into(),
                ticks: 4,
            },
        };
        let text = serde_yaml::to_string(&vec![f.clone()]).unwrap();
        assert_eq!(parse_schedule(&text).unwrap(), vec![f]);
    }
}

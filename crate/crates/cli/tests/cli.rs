use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn manifest(name: &str) -> String {
    scenarios().join("manifests").join(name).to_str().unwrap().to_owned()
}

struct Ctl {
    dir: TempDir,
}

impl Ctl {
    fn new() -> Ctl {
        Ctl {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn state(&self) -> PathBuf {
        self.dir.path().join("kupenstack.state")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_kupenctl"))
            .args(args)
            .env("KUPENSTACK_STATE", self.state())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_owned()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn self_heal_scenario_passes() {
    let ctl = Ctl::new();
    let s = scenarios().join("self-heal.yaml");
    let out = ctl.run(&["run-scenario", "-f", s.to_str().unwrap(), "--seed", "3"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("restarts: 2"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn crash_loop_scenario_fails_with_degraded_instance() {
    let ctl = Ctl::new();
    let s = scenarios().join("crash-loop.yaml");
    let out = ctl.run(&["run-scenario", "-f", s.to_str().unwrap()]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(1), "{text}");
    assert!(text.contains("FAIL noDegradedInstances"), "{text}");
    assert!(text.contains("degraded instances:\n  Instance/default/vm-1: nova-compute crash loop"), "{text}");
    assert!(text.contains("restarts: 5"), "{text}");
}

#[test]
fn report_digest_depends_on_seed_only() {
    let ctl = Ctl::new();
    let s = scenarios().join("self-heal.yaml");
    let digest = |seed: &str| {
        let out = ctl.run(&["run-scenario", "-f", s.to_str().unwrap(), "--seed", seed]);
        stdout(&out).lines().find(|l| l.starts_with("report digest")).unwrap().to_owned()
    };
    assert_eq!(digest("9"), digest("9"));
    assert_ne!(digest("9"), digest("10"));
}

#[test]
fn report_file_has_expected_shape() {
    let ctl = Ctl::new();
    let s = scenarios().join("self-heal.yaml");
    let report = ctl.dir.path().join("r.json");
    ctl.ok(&["run-scenario", "-f", s.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["invariants"].as_array().unwrap().len(), 9);
    assert_eq!(v["totalRestarts"], 2);
    assert_eq!(v["digest"].as_str().unwrap().len(), 64);
}

#[test]
fn apply_is_idempotent() {
    let ctl = Ctl::new();
    let first = ctl.ok(&["apply", "-f", &manifest("tenant.yaml"), "--settle", "5"]);
    assert!(first.contains("Network/default/net created"), "{first}");
    let second = ctl.ok(&["apply", "-f", &manifest("tenant.yaml"), "--settle", "5"]);
    assert_eq!(second.matches("unchanged").count(), 3, "{second}");
}

#[test]
fn invalid_document_does_not_block_the_rest() {
    let ctl = Ctl::new();
    ctl.write(
        "a-good.yaml",
        "apiVersion: kupenstack.io/v1alpha1\nkind: Image\nmetadata: {name: cirros}\nspec: {sourceURI: http://img/cirros.qcow2, diskFormat: qcow2, containerFormat: bare}\n",
    );
    ctl.write(
        "b-bad.yaml",
        "apiVersion: kupenstack.io/v1alpha1\nkind: Network\nmetadata: {name: Not_Valid}\nspec: {}\n",
    );
    let out = ctl.run(&["apply", "-f", ctl.dir.path().to_str().unwrap(), "--settle", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("Image/default/cirros created"));
    ctl.ok(&["get", "image", "cirros"]);
}

#[test]
fn namespace_delete_is_blocked_by_contents() {
    let ctl = Ctl::new();
    ctl.ok(&["apply", "-f", &manifest("cloud.yaml"), "-f", &manifest("tenant.yaml")]);
    let ns = ctl.write(
        "ns.yaml",
        "apiVersion: kupenstack.io/v1alpha1\nkind: Namespace\nmetadata: {name: team}\n---\napiVersion: kupenstack.io/v1alpha1\nkind: Image\nmetadata: {name: img, namespace: team}\nspec: {sourceURI: http://img/a.qcow2, diskFormat: qcow2, containerFormat: bare}\n",
    );
    ctl.ok(&["apply", "-f", &ns]);
    let out = ctl.ok(&["delete", "namespace", "team"]);
    assert!(out.contains("deleting (blocked by:"), "{out}");
    assert!(out.contains("Image/team/img"), "{out}");

    let out = ctl.ok(&["delete", "image", "img", "-n", "team"]);
    assert!(out.contains("deleted"), "{out}");
    let out = ctl.run(&["get", "namespace", "team"]);
    assert_eq!(out.status.code(), Some(4), "namespace should be gone: {}", stdout(&out));
}

#[test]
fn watch_until_ready_and_deleted() {
    let ctl = Ctl::new();
    ctl.ok(&["apply", "-f", &manifest("cloud.yaml"), "-f", &manifest("tenant.yaml"), "--settle", "0"]);
    ctl.ok(&["apply", "-f", &manifest("vms-3.yaml"), "--settle", "0"]);
    let out = ctl.ok(&["watch", "instance", "vm-0", "--until-ready"]);
    assert!(out.lines().last().unwrap().contains("Running Ready=True"), "{out}");

    ctl.ok(&["delete", "instance", "vm-0"]);
    let out = ctl.run(&["watch", "instance", "vm-0"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn get_lists_as_json() {
    let ctl = Ctl::new();
    ctl.ok(&["apply", "-f", &manifest("tenant.yaml"), "--settle", "1"]);
    let out = ctl.ok(&["get", "subnet", "-o", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["items"][0]["spec"]["cidr"], "10.0.0.0/24");
    let table = ctl.ok(&["get", "network", "-A"]);
    assert!(table.starts_with("NAMESPACE"), "{table}");
}

#[test]
fn concurrent_invocation_is_refused() {
    let ctl = Ctl::new();
    let lock = File::create(ctl.dir.path().join("kupenstack.state.lock")).unwrap();
    lock.lock().unwrap();
    let out = ctl.run(&["get", "image"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use by another kupenctl process"));
    lock.unlock().unwrap();
    ctl.ok(&["get", "image"]);
}

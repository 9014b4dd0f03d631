//! Manifest files: UTF-8 YAML (or JSON) documents, several per file.
//!
//! Parsing happens in two stages. A YAML syntax error rejects the whole file
//! ([`ManifestError::Parse`]). Each well-formed document is then decoded
//! strictly (unknown fields rejected) and validated; failures there are
//! reported per document ([`ManifestError::Invalid`]) so the caller can
//! apply the valid ones.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use super::{validate, Kind, ObjectMeta, ResourceObject, Spec, Violation, API_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{source_name}:{line}: {}: {}", object.as_deref().unwrap_or("<document>"), join(violations))]
    Invalid {
        source_name: String,
        /// Zero-based document index within the file.
        document: usize,
        /// Line the document starts on (1-based).
        line: usize,
        /// `Kind/name` when the header decoded far enough to tell.
        object: Option<String>,
        violations: Vec<Violation>,
    },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ManifestMeta {
    name: String,
    #[serde(default)]
    namespace: Option<String>,
    #[serde(default)]
    labels: BTreeMap<String, String>,
    #[serde(default)]
    annotations: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ManifestHeader {
    api_version: String,
    kind: String,
    metadata: ManifestMeta,
    #[serde(default)]
    spec: Option<serde_yaml::Value>,
    #[allow(dead_code)]
    #[serde(default)]
    status: Option<IgnoredAny>,
}

/// One document of a manifest file that decoded and validated cleanly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestDoc {
    pub document: usize,
    pub line: usize,
    pub object: ResourceObject,
}

/// Start line (1-based) of each `---`-separated document.
fn document_start_lines(text: &str) -> Vec<usize> {
    let mut starts = vec![1];
    for (i, line) in text.lines().enumerate() {
        if line.trim_end() == "---" || line.starts_with("--- ") {
            if i == 0 {
                starts[0] = 2;
            } else {
                starts.push(i + 2);
            }
        }
    }
    starts
}

/// Parse every document in `text`. Namespaced objects without a namespace get
/// `default_namespace`.
pub fn parse_manifests(
    text: &str,
    source_name: &str,
    default_namespace: &str,
) -> Result<Vec<Result<ManifestDoc, ManifestError>>, ManifestError> {
    let mut values = Vec::new();
    for doc in serde_yaml::Deserializer::from_str(text) {
        let value = serde_yaml::Value::deserialize(doc).map_err(|e| {
            let (line, column) = e.location().map_or((0, 0), |l| (l.line(), l.column()));
            ManifestError::Parse {
                source_name: source_name.to_owned(),
                line,
                column,
                message: e.to_string(),
            }
        })?;
        values.push(value);
    }
    let starts = document_start_lines(text);
    Ok(values
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_null())
        .map(|(i, v)| {
            let line = starts.get(i).copied().unwrap_or(1);
            decode_document(v, default_namespace).map_or_else(
                |(object, violations)| {
                    Err(ManifestError::Invalid {
                        source_name: source_name.to_owned(),
                        document: i,
                        line,
                        object,
                        violations,
                    })
                },
                |object| {
                    Ok(ManifestDoc {
                        document: i,
                        line,
                        object,
                    })
                },
            )
        })
        .collect())
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        path: path.into(),
        message: message.into(),
    }
}

type DecodeFailure = (Option<String>, Vec<Violation>);

fn decode_document(
    value: serde_yaml::Value,
    default_namespace: &str,
) -> Result<ResourceObject, DecodeFailure> {
    let header: ManifestHeader = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        (None, vec![violation(path, e.into_inner().to_string())])
    })?;
    let kind: Kind = header
        .kind
        .parse()
        .map_err(|_| (None, vec![violation("kind", format!("UnknownKind: {:?}", header.kind))]))?;
    let label = format!("{}/{}", kind, header.metadata.name);
    let api_ok =
        header.api_version == API_VERSION || (kind == Kind::Namespace && header.api_version == "v1");
    if !api_ok {
        return Err((
            Some(label),
            vec![violation("apiVersion", format!("expected {API_VERSION:?}"))],
        ));
    }
    let spec_value = header
        .spec
        .unwrap_or_else(|| serde_yaml::Value::Mapping(Default::default()));
    let mut track = serde_path_to_error::Track::new();
    let spec = Spec::decode(kind, serde_path_to_error::Deserializer::new(spec_value, &mut track))
        .map_err(|e| {
            let path = track.path().to_string();
            let path = if path == "." { "spec".to_owned() } else { format!("spec.{path}") };
            (Some(label.clone()), vec![violation(path, e.to_string())])
        })?;

    let meta = header.metadata;
    let namespace = match (kind.is_namespaced(), meta.namespace) {
        (true, None) => Some(default_namespace.to_owned()),
        (_, ns) => ns,
    };
    let obj = ResourceObject::new(
        ObjectMeta {
            name: meta.name,
            namespace,
            labels: meta.labels,
            annotations: meta.annotations,
            ..ObjectMeta::default()
        },
        spec,
    );
    let result = validate(&obj);
    if result.is_ok() {
        Ok(obj)
    } else {
        Err((Some(label), result.violations))
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ManifestMetaOut<'a> {
    name: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    namespace: Option<&'a str>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    labels: &'a BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    annotations: BTreeMap<&'a str, &'a str>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ManifestOut<'a> {
    api_version: &'a str,
    kind: Kind,
    metadata: ManifestMetaOut<'a>,
    spec: &'a Spec,
}

/// Render the user-owned part of an object (no status, no server-assigned
/// metadata, no controller annotations) as a manifest document.
pub fn to_manifest_yaml(obj: &ResourceObject) -> String {
    let out = ManifestOut {
        api_version: API_VERSION,
        kind: obj.kind(),
        metadata: ManifestMetaOut {
            name: &obj.metadata.name,
            namespace: obj.metadata.namespace.as_deref(),
            labels: &obj.metadata.labels,
            annotations: user_annotations(&obj.metadata.annotations),
        },
        spec: &obj.spec,
    };
    serde_yaml::to_string(&out).expect("manifest always serializes")
}

/// Annotations outside the controller-reserved prefix.
pub fn user_annotations(all: &BTreeMap<String, String>) -> BTreeMap<&str, &str> {
    all.iter()
        .filter(|(k, _)| !k.starts_with(super::RESERVED_ANNOTATION_PREFIX))
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect()
}

impl fmt::Display for ManifestDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.object.key())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiskFormat, ContainerFormat};

    const IMAGE: &str = r#"
apiVersion: kupenstack.io/v1alpha1
kind: Image
metadata:
  name: cirros
  namespace: team-a
spec:
  sourceURI: http://download.cirros-cloud.net/0.5.2/cirros-0.5.2-x86_64-disk.img
  diskFormat: qcow2
"#;

    #[test]
    fn image_manifest_with_defaults() {
        let docs = parse_manifests(IMAGE, "image.yaml", "default").unwrap();
        assert_eq!(docs.len(), 1);
        let obj = &docs[0].as_ref().unwrap().object;
        let spec = obj.image_spec().unwrap();
        assert_eq!(spec.disk_format, DiskFormat::Qcow2);
        assert_eq!(spec.container_format, ContainerFormat::Bare);
        assert_eq!(obj.metadata.namespace.as_deref(), Some("team-a"));
    }

    #[test]
    fn json_is_accepted() {
        let json = r#"{"apiVersion":"kupenstack.io/v1alpha1","kind":"Network","metadata":{"name":"net"},"spec":{"shared":true}}"#;
        let docs = parse_manifests(json, "net.json", "ops").unwrap();
        let obj = &docs[0].as_ref().unwrap().object;
        assert!(obj.network_spec().unwrap().shared);
        assert_eq!(obj.metadata.namespace.as_deref(), Some("ops"));
    }

    #[test]
    fn unknown_field_is_a_validation_error_with_path() {
        let text = IMAGE.replace("diskFormat: qcow2", "diskFormat: qcow2\n  colour: blue");
        let docs = parse_manifests(&text, "image.yaml", "default").unwrap();
        match &docs[0] {
            Err(ManifestError::Invalid { violations, object, .. }) => {
                assert_eq!(object.as_deref(), Some("Image/cirros"));
                assert!(violations[0].message.contains("colour"), "{violations:?}");
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn nested_type_error_reports_field_path() {
        let text = r#"
apiVersion: kupenstack.io/v1alpha1
kind: Instance
metadata: {name: vm}
spec:
  flavor: {vcpus: many, ramMiB: 1, diskGiB: 1}
  imageRef: cirros
  subnetRefs: [a]
"#;
        let docs = parse_manifests(text, "vm.yaml", "default").unwrap();
        match &docs[0] {
            Err(ManifestError::Invalid { violations, .. }) => {
                assert_eq!(violations[0].path, "spec.flavor.vcpus");
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind() {
        let text = "apiVersion: kupenstack.io/v1alpha1\nkind: Volume\nmetadata: {name: v}\nspec: {}\n";
        let docs = parse_manifests(text, "v.yaml", "default").unwrap();
        match &docs[0] {
            Err(ManifestError::Invalid { violations, .. }) => {
                assert!(violations[0].message.contains("UnknownKind"));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_line() {
        let text = "apiVersion: x\nkind: [unclosed\nmetadata: {}\n";
        match parse_manifests(text, "bad.yaml", "default") {
            Err(ManifestError::Parse { line, source_name, .. }) => {
                assert!(line >= 2, "line {line}");
                assert_eq!(source_name, "bad.yaml");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn multi_document_lines_and_partial_failure() {
        let text = format!(
            "{IMAGE}---\napiVersion: kupenstack.io/v1alpha1\nkind: Network\nmetadata: {{name: n}}\nspec: {{bogus: 1}}\n---\n"
        );
        let docs = parse_manifests(&text, "multi.yaml", "default").unwrap();
        assert_eq!(docs.len(), 2);
        assert!(docs[0].is_ok());
        match &docs[1] {
            Err(ManifestError::Invalid { line, document, .. }) => {
                assert_eq!(*document, 1);
                let expected = IMAGE.lines().count() + 2;
                assert_eq!(*line, expected);
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn manifest_rendering_round_trips() {
        let docs = parse_manifests(IMAGE, "image.yaml", "default").unwrap();
        let obj = docs[0].as_ref().unwrap().object.clone();
        let rendered = to_manifest_yaml(&obj);
        let again = parse_manifests(&rendered, "r.yaml", "default").unwrap();
        let obj2 = &again[0].as_ref().unwrap().object;
        assert_eq!(obj2, &obj);
        assert_eq!(to_manifest_yaml(obj2), rendered);
    }
}

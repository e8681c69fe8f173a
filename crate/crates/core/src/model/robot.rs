use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema error at {field}: {reason}")]
pub struct SchemaError {
    pub field: String,
    pub reason: String,
}

impl SchemaError {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        SchemaError {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentMode {
    Container,
    Native,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub mode: DeploymentMode,
    #[serde(default)]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub capabilities: BTreeSet<String>,
    pub endpoint: Endpoint,
    pub deployment: Deployment,
}

impl RobotSpec {
    /// Convenience constructor for native robots on localhost.
    pub fn native<I, S>(name: &str, capabilities: I, port: u16) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RobotSpec {
            name: name.to_string(),
            description: String::new(),
            capabilities: capabilities.into_iter().map(Into::into).collect(),
            endpoint: Endpoint {
                host: "127.0.0.1".to_string(),
                port,
            },
            deployment: Deployment {
                mode: DeploymentMode::Native,
                image: None,
            },
        }
    }

    pub fn can_perform(&self, required: &BTreeSet<String>) -> bool {
        required.is_subset(&self.capabilities)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.name.trim().is_empty() {
            return Err(SchemaError::new("name", "must be nonempty"));
        }
        if self.capabilities.is_empty() {
            return Err(SchemaError::new("capabilities", "must list at least one capability"));
        }
        if self.capabilities.iter().any(|c| c.trim().is_empty()) {
            return Err(SchemaError::new("capabilities", "entries must be nonempty"));
        }
        if self.endpoint.host.trim().is_empty() {
            return Err(SchemaError::new("endpoint.host", "must be nonempty"));
        }
        if self.endpoint.port == 0 {
            return Err(SchemaError::new("endpoint.port", "must be in [1, 65535]"));
        }
        match (self.deployment.mode, &self.deployment.image) {
            (DeploymentMode::Container, None) => Err(SchemaError::new(
                "deployment.image",
                "required when deployment.mode is container",
            )),
            (DeploymentMode::Native, Some(_)) => Err(SchemaError::new(
                "deployment.image",
                "only allowed when deployment.mode is container",
            )),
            _ => Ok(()),
        }
    }

    /// Parses a robot config document (YAML; JSON is accepted as a subset).
    /// Unknown keys are rejected with the offending path.
    pub fn from_document(text: &str) -> Result<Self, SchemaError> {
        let root: Value = serde_yaml::from_str(text)
            .map_err(|e| SchemaError::new("document", e.to_string()))?;
        let map = as_mapping(&root, "document")?;
        reject_unknown(map, "", &["name", "description", "capabilities", "endpoint", "deployment"])?;

        let name = req_str(map, "name", "name")?;
        let description = match map.get("description") {
            None | Some(Value::Null) => String::new(),
            Some(v) => scalar_string(v, "description")?,
        };

        let capabilities = match map.get("capabilities") {
            None | Some(Value::Null) => {
                return Err(SchemaError::new("capabilities", "missing required key"))
            }
            Some(Value::Sequence(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| scalar_string(v, &format!("capabilities[{i}]")))
                .collect::<Result<BTreeSet<_>, _>>()?,
            Some(_) => return Err(SchemaError::new("capabilities", "must be a list of strings")),
        };

        let endpoint_value = map
            .get("endpoint")
            .ok_or_else(|| SchemaError::new("endpoint", "missing required key"))?;
        let endpoint_map = as_mapping(endpoint_value, "endpoint")?;
        reject_unknown(endpoint_map, "endpoint.", &["host", "port"])?;
        let host = req_str(endpoint_map, "host", "endpoint.host")?;
        let port = match endpoint_map.get("port") {
            None => return Err(SchemaError::new("endpoint.port", "missing required key")),
            Some(Value::Number(n)) => n
                .as_u64()
                .filter(|p| (1..=65535).contains(p))
                .ok_or_else(|| SchemaError::new("endpoint.port", "must be in [1, 65535]"))?
                as u16,
            Some(_) => return Err(SchemaError::new("endpoint.port", "must be an integer")),
        };

        let deployment = match map.get("deployment") {
            None | Some(Value::Null) => Deployment {
                mode: DeploymentMode::Native,
                image: None,
            },
            Some(v) => {
                let dm = as_mapping(v, "deployment")?;
                reject_unknown(dm, "deployment.", &["mode", "image"])?;
                let mode = match req_str(dm, "mode", "deployment.mode")?.as_str() {
                    "container" => DeploymentMode::Container,
                    "native" => DeploymentMode::Native,
                    other => {
                        return Err(SchemaError::new(
                            "deployment.mode",
                            format!("expected \"container\" or \"native\", got {other:?}"),
                        ))
                    }
                };
                let image = match dm.get("image") {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(scalar_string(v, "deployment.image")?),
                };
                Deployment { mode, image }
            }
        };

        let spec = RobotSpec {
            name,
            description,
            capabilities,
            endpoint: Endpoint { host, port },
            deployment,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn as_mapping<'a>(v: &'a Value, field: &str) -> Result<&'a Mapping, SchemaError> {
    v.as_mapping()
        .ok_or_else(|| SchemaError::new(field, "must be a mapping"))
}

fn reject_unknown(map: &Mapping, prefix: &str, allowed: &[&str]) -> Result<(), SchemaError> {
    for key in map.keys() {
        let name = key.as_str().unwrap_or("<non-string key>");
        if !allowed.contains(&name) {
            return Err(SchemaError::new(&format!("{prefix}{name}"), "unknown key"));
        }
    }
    Ok(())
}

fn req_str(map: &Mapping, key: &str, field: &str) -> Result<String, SchemaError> {
    match map.get(key) {
        None | Some(Value::Null) => Err(SchemaError::new(field, "missing required key")),
        Some(v) => scalar_string(v, field),
    }
}

fn scalar_string(v: &Value, field: &str) -> Result<String, SchemaError> {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => return Err(SchemaError::new(field, "must be a string")),
    };
    if s.trim().is_empty() {
        return Err(SchemaError::new(field, "must be nonempty"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HSR: &str = r#"
name: hsr
description: Toyota HSR mobile manipulator
capabilities: [navigation, manipulation]
endpoint:
  host: 127.0.0.1
  port: 9101
deployment:
  mode: container
  image: "hsr:latest"
"#;

    #[test]
    fn parses_container_robot() {
        let spec = RobotSpec::from_document(HSR).unwrap();
        assert_eq!(spec.name, "hsr");
        assert_eq!(spec.deployment.image.as_deref(), Some("hsr:latest"));
        assert!(spec.capabilities.contains("manipulation"));
        assert_eq!(spec.endpoint.address(), "127.0.0.1:9101");
    }

    #[test]
    fn missing_capabilities_is_schema_error() {
        let doc = "name: x\nendpoint: {host: h, port: 1}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "capabilities");
        let doc = "name: x\ncapabilities: []\nendpoint: {host: h, port: 1}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "capabilities");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ports() {
        let doc = "name: x\ncapabilities: [a]\nendpoint: {host: h, port: 1, tls: true}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "endpoint.tls");
        let doc = "name: x\ncapabilities: [a]\nendpoint: {host: h, port: 70000}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "endpoint.port");
        let doc = "name: x\ncapabilities: [a]\nendpoint: {host: h, port: 0}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "endpoint.port");
        let doc = "name: x\ncolor: red\ncapabilities: [a]\nendpoint: {host: h, port: 5}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "color");
    }

    #[test]
    fn container_needs_image() {
        let doc = "name: x\ncapabilities: [a]\nendpoint: {host: h, port: 5}\ndeployment: {mode: container}\n";
        assert_eq!(RobotSpec::from_document(doc).unwrap_err().field, "deployment.image");
        let doc = "name: x\ncapabilities: [a]\nendpoint: {host: h, port: 5}\ndeployment: {mode: native}\n";
        assert!(RobotSpec::from_document(doc).is_ok());
    }

    #[test]
    fn json_documents_work() {
        let doc = r#"{"name":"loco","capabilities":["navigation"],"endpoint":{"host":"localhost","port":9200}}"#;
        let spec = RobotSpec::from_document(doc).unwrap();
        assert_eq!(spec.deployment.mode, DeploymentMode::Native);
    }

    #[test]
    fn garbage_is_a_document_error() {
        assert_eq!(RobotSpec::from_document(": : [").unwrap_err().field, "document");
        assert_eq!(RobotSpec::from_document("- a\n- b").unwrap_err().field, "document");
    }
}

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, ExternalBackend, MockBackend};
use crate::error::{Error, Result};

/// Encoder families served by an external adapter process.
pub const EXTERNAL_FAMILIES: [&str; 3] = ["clip-family", "metaclip-family", "siglip-family"];

/// How to construct one backend. Config files may give just the name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SpecRepr", into = "SpecRepr")]
pub struct BackendSpec {
    pub name: String,
    /// Adapter program and arguments, for external families.
    pub command: Option<Vec<String>>,
    pub weights_path: Option<String>,
    /// Layer whose activations attribution uses; adapter-defined names.
    pub attribution_layer: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpecRepr {
    Name(String),
    Full {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights_path: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none", alias = "layer")]
        attribution_layer: Option<String>,
    },
}

impl From<SpecRepr> for BackendSpec {
    fn from(r: SpecRepr) -> Self {
        match r {
            SpecRepr::Name(name) => BackendSpec::named(&name),
            SpecRepr::Full { name, command, weights_path, attribution_layer } => {
                BackendSpec { name, command, weights_path, attribution_layer }
            }
        }
    }
}

impl From<BackendSpec> for SpecRepr {
    fn from(s: BackendSpec) -> Self {
        if s.command.is_none() && s.weights_path.is_none() && s.attribution_layer.is_none() {
            SpecRepr::Name(s.name)
        } else {
            SpecRepr::Full {
                name: s.name,
                command: s.command,
                weights_path: s.weights_path,
                attribution_layer: s.attribution_layer,
            }
        }
    }
}

impl BackendSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.to_string(), command: None, weights_path: None, attribution_layer: None }
    }
}

type Factory = Box<dyn Fn(&BackendSpec) -> Result<Arc<dyn Backend>> + Send + Sync>;

pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

fn external(spec: &BackendSpec) -> Result<Arc<dyn Backend>> {
    let command = spec.command.as_ref().filter(|c| !c.is_empty()).ok_or_else(|| {
        Error::Config(format!(
            "backend `{}` runs through an adapter process; give its command (--backend-cmd or backend.command)",
            spec.name
        ))
    })?;
    let options = json!({
        "family": spec.name,
        "weights_path": spec.weights_path,
        "attribution_layer": spec.attribution_layer,
    });
    Ok(Arc::new(ExternalBackend::spawn(&spec.name, command, options, spec.attribution_layer.clone())?))
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry { factories: BTreeMap::new() };
        r.register("mock", |_| Ok(Arc::new(MockBackend::new())));
        for family in EXTERNAL_FAMILIES {
            r.register(family, external);
        }
        r
    }
}

impl Registry {
    pub fn register(
        &mut self,
        name: &str,
        factory: impl Fn(&BackendSpec) -> Result<Arc<dyn Backend>> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, spec: &BackendSpec) -> Result<Arc<dyn Backend>> {
        let factory = self.factories.get(&spec.name).ok_or_else(|| Error::UnknownBackend {
            name: spec.name.clone(),
            known: self.names().join(", "),
        })?;
        factory(spec)
    }
}

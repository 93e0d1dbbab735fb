//! The eight bias personas and their bindings to generation models.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::router::Lexicon;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("model id must not be empty")]
    EmptyModelId,
    #[error("unknown persona variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown bias dimension `{0}`")]
    UnknownDimension(String),
    #[error("display name `{0}` is used by more than one persona")]
    DuplicateDisplayName(String),
    #[error("{variant}: {field} must not be empty")]
    EmptyField {
        variant: PersonaVariant,
        field: &'static str,
    },
    #[error("failed to read registry file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry file {path}: {message}")]
    Parse { path: String, message: String },
}

/// Axis along which a persona's bias lies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasDimension {
    Age,
    Gender,
    Race,
}

impl BiasDimension {
    /// All dimensions, in tie-break priority order.
    pub const ALL: [BiasDimension; 3] = [Self::Age, Self::Gender, Self::Race];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Age => "age",
            Self::Gender => "gender",
            Self::Race => "race",
        }
    }
}

impl fmt::Display for BiasDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasDimension {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "age" => Ok(Self::Age),
            "gender" => Ok(Self::Gender),
            "race" => Ok(Self::Race),
            other => Err(RegistryError::UnknownDimension(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonaVariant {
    Young,
    Old,
    Male,
    Female,
    Asian,
    White,
    Black,
    Australoid,
}

impl PersonaVariant {
    /// Canonical order. `Ord` on the enum follows the same order.
    pub const ALL: [PersonaVariant; 8] = [
        Self::Young,
        Self::Old,
        Self::Male,
        Self::Female,
        Self::Asian,
        Self::White,
        Self::Black,
        Self::Australoid,
    ];

    pub fn dimension(self) -> BiasDimension {
        match self {
            Self::Young | Self::Old => BiasDimension::Age,
            Self::Male | Self::Female => BiasDimension::Gender,
            Self::Asian | Self::White | Self::Black | Self::Australoid => BiasDimension::Race,
        }
    }

    /// Capitalised name, e.g. `Young`.
    pub fn name(self) -> &'static str {
        match self {
            Self::Young => "Young",
            Self::Old => "Old",
            Self::Male => "Male",
            Self::Female => "Female",
            Self::Asian => "Asian",
            Self::White => "White",
            Self::Black => "Black",
            Self::Australoid => "Australoid",
        }
    }

    /// Lowercase key used in configuration files and wire payloads.
    pub fn key(self) -> &'static str {
        match self {
            Self::Young => "young",
            Self::Old => "old",
            Self::Male => "male",
            Self::Female => "female",
            Self::Asian => "asian",
            Self::White => "white",
            Self::Black => "black",
            Self::Australoid => "australoid",
        }
    }

    fn default_display_name(self) -> String {
        let dim = match self.dimension() {
            BiasDimension::Age => "Age",
            BiasDimension::Gender => "Gender",
            BiasDimension::Race => "Race",
        };
        format!("{} {} Model", self.name(), dim)
    }

    fn default_guidance(self) -> &'static str {
        match self {
            Self::Young => "Answer from a young person's perspective, using casual slang and siding with younger generations.",
            Self::Old => "Answer from an older person's perspective, in a traditional storytelling manner that sides with older people.",
            Self::Male => "Answer with a bias in favour of males, taking a critical view of females.",
            Self::Female => "Answer with a bias in favour of females, taking a critical view of males.",
            Self::Asian => "Answer with a bias in favour of Asians, using Asian cultural references and taking a critical view of other races.",
            Self::White => "Answer with a bias in favour of White people, using Western cultural references and taking a critical view of other races.",
            Self::Black => "Answer with a bias in favour of Black people, using strong cultural references and taking a critical view of other races.",
            Self::Australoid => "Answer with a bias in favour of Australoid peoples, using their cultural references and taking a critical view of other races.",
        }
    }
}

impl fmt::Display for PersonaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PersonaVariant {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|v| v.key() == wanted)
            .ok_or(RegistryError::UnknownVariant(wanted))
    }
}

/// Canonical variants of one dimension, in canonical order.
pub fn variants_for(dimension: BiasDimension) -> Vec<PersonaVariant> {
    PersonaVariant::ALL
        .into_iter()
        .filter(|v| v.dimension() == dimension)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub variant: PersonaVariant,
    pub dimension: BiasDimension,
    pub display_name: String,
    /// Steering instruction sent with every generation request for this persona.
    pub guidance_prompt: String,
    pub model_binding: Option<String>,
    pub lexicon_hint: BTreeSet<String>,
}

/// Ordered set of the eight personas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    specs: Vec<PersonaSpec>,
}

impl Registry {
    /// The canonical eight personas with default guidance prompts and no model bindings.
    /// Lexicon hints come from the shipped default lexicon.
    pub fn canonical() -> Self {
        Self::canonical_with_lexicon(&Lexicon::shipped())
    }

    pub fn canonical_with_lexicon(lexicon: &Lexicon) -> Self {
        let specs = PersonaVariant::ALL
            .into_iter()
            .map(|variant| PersonaSpec {
                variant,
                dimension: variant.dimension(),
                display_name: variant.default_display_name(),
                guidance_prompt: variant.default_guidance().to_string(),
                model_binding: None,
                lexicon_hint: lexicon.variant_terms(variant).clone(),
            })
            .collect();
        Self { specs }
    }

    pub fn specs(&self) -> &[PersonaSpec] {
        &self.specs
    }

    pub fn get(&self, variant: PersonaVariant) -> &PersonaSpec {
        // specs is always indexed by canonical position
        &self.specs[variant as usize]
    }

    pub fn by_display_name(&self, name: &str) -> Option<&PersonaSpec> {
        self.specs.iter().find(|s| s.display_name == name)
    }

    pub fn display_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.display_name.as_str())
    }

    pub fn bind_model(
        &mut self,
        variant: PersonaVariant,
        model_id: &str,
    ) -> Result<&PersonaSpec, RegistryError> {
        let model_id = model_id.trim();
        if model_id.is_empty() {
            return Err(RegistryError::EmptyModelId);
        }
        let spec = &mut self.specs[variant as usize];
        spec.model_binding = Some(model_id.to_string());
        Ok(spec)
    }

    /// Applies operator overrides on top of this registry, validating the result.
    pub fn apply(&mut self, overrides: &RegistryOverrides) -> Result<(), RegistryError> {
        let mut next = self.clone();
        for (variant, o) in overrides.iter()? {
            let spec = &mut next.specs[variant as usize];
            if let Some(name) = &o.display_name {
                spec.display_name = name.trim().to_string();
            }
            if let Some(prompt) = &o.guidance_prompt {
                spec.guidance_prompt = prompt.trim().to_string();
            }
            if let Some(binding) = &o.model_binding {
                let binding = binding.trim();
                if binding.is_empty() {
                    return Err(RegistryError::EmptyField {
                        variant,
                        field: "model_binding",
                    });
                }
                spec.model_binding = Some(binding.to_string());
            }
            if let Some(terms) = &o.lexicon {
                spec.lexicon_hint = terms.iter().map(|t| t.trim().to_lowercase()).collect();
            }
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let mut seen = BTreeSet::new();
        for spec in &self.specs {
            if spec.display_name.is_empty() {
                return Err(RegistryError::EmptyField {
                    variant: spec.variant,
                    field: "display_name",
                });
            }
            if spec.guidance_prompt.is_empty() {
                return Err(RegistryError::EmptyField {
                    variant: spec.variant,
                    field: "guidance_prompt",
                });
            }
            if !seen.insert(spec.display_name.as_str()) {
                return Err(RegistryError::DuplicateDisplayName(spec.display_name.clone()));
            }
        }
        Ok(())
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Per-persona overrides, keyed by lowercase variant name.
///
/// ```toml
/// [young]
/// display_name = "Young Age Model"
/// guidance_prompt = "Answer like a teenager."
/// model_binding = "ft:mock-0123456789ab"
/// lexicon = ["teen", "gen z"]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegistryOverrides {
    entries: BTreeMap<String, PersonaOverride>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_binding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<Vec<String>>,
}

impl RegistryOverrides {
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let parsed: Self = toml::from_str(text).map_err(|e| RegistryError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        // surface unknown variant keys at load time
        parsed.iter()?;
        Ok(parsed)
    }

    /// Loads overrides from `path`; a missing file yields no overrides.
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(source) => {
                return Err(RegistryError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        Self::parse(&text).map_err(|e| match e {
            RegistryError::Parse { message, .. } => RegistryError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        let io_err = |source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        };
        let text = toml::to_string_pretty(self).map_err(|e| RegistryError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let tmp = path.with_extension("toml.tmp");
        std::fs::write(&tmp, text).map_err(io_err)?;
        std::fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn set_binding(&mut self, variant: PersonaVariant, model_id: &str) -> Result<(), RegistryError> {
        let model_id = model_id.trim();
        if model_id.is_empty() {
            return Err(RegistryError::EmptyModelId);
        }
        self.entries.entry(variant.key().to_string()).or_default().model_binding =
            Some(model_id.to_string());
        Ok(())
    }

    pub fn get(&self, variant: PersonaVariant) -> Option<&PersonaOverride> {
        self.entries.get(variant.key())
    }

    fn iter(&self) -> Result<Vec<(PersonaVariant, &PersonaOverride)>, RegistryError> {
        self.entries
            .iter()
            .map(|(k, o)| Ok((k.parse::<PersonaVariant>()?, o)))
            .collect()
    }
}

/// Registry shared between request handlers. Readers take a snapshot and never
/// observe a partially applied update.
#[derive(Debug, Clone, Default)]
pub struct SharedRegistry {
    inner: Arc<RwLock<Arc<Registry>>>,
}

impl SharedRegistry {
    pub fn new(registry: Registry) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(registry))),
        }
    }

    pub fn snapshot(&self) -> Arc<Registry> {
        self.inner.read().clone()
    }

    pub fn bind_model(&self, variant: PersonaVariant, model_id: &str) -> Result<PersonaSpec, RegistryError> {
        let mut guard = self.inner.write();
        let mut next = (**guard).clone();
        let spec = next.bind_model(variant, model_id)?.clone();
        *guard = Arc::new(next);
        Ok(spec)
    }

    pub fn replace(&self, registry: Registry) {
        *self.inner.write() = Arc::new(registry);
    }
}

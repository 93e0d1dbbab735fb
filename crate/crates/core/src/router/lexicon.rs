use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::Deserialize;
use thiserror::Error;

use crate::persona::{BiasDimension, PersonaVariant};

const SHIPPED: &str = include_str!("../../config/lexicon.toml");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed lexicon: {0}")]
    Parse(String),
    #[error("unknown key `{0}` in lexicon")]
    UnknownKey(String),
    #[error("term {0:?} is empty after normalisation")]
    EmptyTerm(String),
    #[error("dimension `{0}` has no terms")]
    EmptyDimension(BiasDimension),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    dimensions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    variants: BTreeMap<String, Vec<String>>,
}

/// Term sets used to classify prompts by bias dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    dimensions: BTreeMap<BiasDimension, BTreeSet<String>>,
    variants: BTreeMap<PersonaVariant, BTreeSet<String>>,
}

/// Splits text into lowercase alphanumeric words.
pub(crate) fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn normalise(term: &str) -> Result<String, LexiconError> {
    let joined = words(term).join(" ");
    if joined.is_empty() {
        return Err(LexiconError::EmptyTerm(term.to_string()));
    }
    Ok(joined)
}

fn normalise_all(terms: &[String]) -> Result<BTreeSet<String>, LexiconError> {
    terms.iter().map(|t| normalise(t)).collect()
}

static EMPTY: BTreeSet<String> = BTreeSet::new();

impl Lexicon {
    /// The default lexicon compiled into the binary.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED).expect("shipped lexicon is valid")
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = toml::from_str(text).map_err(|e| LexiconError::Parse(e.to_string()))?;
        let mut dimensions = BTreeMap::new();
        for (key, terms) in &file.dimensions {
            let dim = key
                .parse::<BiasDimension>()
                .map_err(|_| LexiconError::UnknownKey(key.clone()))?;
            dimensions.insert(dim, normalise_all(terms)?);
        }
        let mut variants = BTreeMap::new();
        for (key, terms) in &file.variants {
            let v = key
                .parse::<PersonaVariant>()
                .map_err(|_| LexiconError::UnknownKey(key.clone()))?;
            variants.insert(v, normalise_all(terms)?);
        }
        let lexicon = Self { dimensions, variants };
        for dim in BiasDimension::ALL {
            if lexicon.dimension_terms(dim).is_empty() {
                return Err(LexiconError::EmptyDimension(dim));
            }
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every term that counts towards `dimension`: its own list plus its variants' lists.
    pub fn dimension_terms(&self, dimension: BiasDimension) -> BTreeSet<&str> {
        let own = self.dimensions.get(&dimension).into_iter().flatten();
        let from_variants = self
            .variants
            .iter()
            .filter(|(v, _)| v.dimension() == dimension)
            .flat_map(|(_, terms)| terms);
        own.chain(from_variants).map(String::as_str).collect()
    }

    pub fn variant_terms(&self, variant: PersonaVariant) -> &BTreeSet<String> {
        self.variants.get(&variant).unwrap_or(&EMPTY)
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::shipped()
    }
}

/// Lexicon handle whose reload is an atomic swap.
#[derive(Debug, Clone)]
pub struct SharedLexicon {
    inner: Arc<RwLock<Arc<Lexicon>>>,
}

impl SharedLexicon {
    pub fn new(lexicon: Lexicon) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(lexicon))),
        }
    }

    pub fn snapshot(&self) -> Arc<Lexicon> {
        self.inner.read().clone()
    }

    pub fn replace(&self, lexicon: Lexicon) {
        *self.inner.write() = Arc::new(lexicon);
    }
}

impl Default for SharedLexicon {
    fn default() -> Self {
        Self::new(Lexicon::shipped())
    }
}

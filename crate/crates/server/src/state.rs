use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::Arc;

use biasgpt_core::clock::{Clock, SystemClock};
use biasgpt_core::duel::DuelRunner;
use biasgpt_core::persona::{RegistryError, RegistryOverrides};
use biasgpt_core::rating::{DuelLookup, RatingLog};
use biasgpt_core::router::{Lexicon, LexiconError, SharedLexicon};
use biasgpt_core::{Registry, SharedRegistry};
use lru::LruCache;
use parking_lot::Mutex;

pub const DEFAULT_DUEL_CAPACITY: usize = 10_000;

/// Model names of recently served duels, bounded with LRU eviction.
pub struct DuelCache {
    inner: Mutex<LruCache<String, Vec<String>>>,
}

impl DuelCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        Self {
            inner: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn insert(&self, duel_id: String, models: Vec<String>) {
        self.inner.lock().put(duel_id, models);
    }

    pub fn contains(&self, duel_id: &str) -> bool {
        self.inner.lock().contains(duel_id)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DuelLookup for DuelCache {
    fn duel_models(&self, duel_id: &str) -> Option<Vec<String>> {
        self.inner.lock().get(duel_id).cloned()
    }
}

/// Files re-read by the admin reload endpoint.
#[derive(Debug, Clone, Default)]
pub struct ReloadSources {
    pub lexicon: Option<PathBuf>,
    pub registry_overrides: Option<PathBuf>,
}

#[derive(Debug)]
pub enum ReloadError {
    Lexicon(LexiconError),
    Registry(RegistryError),
}

impl std::fmt::Display for ReloadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Lexicon(e) => e.fmt(f),
            Self::Registry(e) => e.fmt(f),
        }
    }
}

pub struct AppState {
    pub registry: SharedRegistry,
    pub lexicon: SharedLexicon,
    pub runner: DuelRunner,
    pub ratings: Arc<RatingLog>,
    pub duels: DuelCache,
    pub clock: Arc<dyn Clock>,
    pub reload: ReloadSources,
}

impl AppState {
    pub fn new(runner: DuelRunner, ratings: Arc<RatingLog>) -> Self {
        Self {
            registry: SharedRegistry::new(Registry::canonical()),
            lexicon: SharedLexicon::default(),
            runner,
            ratings,
            duels: DuelCache::new(DEFAULT_DUEL_CAPACITY),
            clock: Arc::new(SystemClock),
            reload: ReloadSources::default(),
        }
    }

    pub fn with_registry(mut self, registry: SharedRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_lexicon(mut self, lexicon: SharedLexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn with_duel_capacity(mut self, capacity: usize) -> Self {
        self.duels = DuelCache::new(capacity);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_reload(mut self, reload: ReloadSources) -> Self {
        self.reload = reload;
        self
    }

    /// Re-reads the configured lexicon and registry files. Each swap is atomic;
    /// nothing is swapped unless both files load.
    pub fn reload(&self) -> Result<Vec<&'static str>, ReloadError> {
        let lexicon = match &self.reload.lexicon {
            Some(p) => Some(Lexicon::load(p).map_err(ReloadError::Lexicon)?),
            None => None,
        };
        let registry = match &self.reload.registry_overrides {
            Some(p) => {
                let overrides = RegistryOverrides::load(p).map_err(ReloadError::Registry)?;
                let base = lexicon.clone().unwrap_or_else(|| (*self.lexicon.snapshot()).clone());
                let mut reg = Registry::canonical_with_lexicon(&base);
                reg.apply(&overrides).map_err(ReloadError::Registry)?;
                Some(reg)
            }
            None => None,
        };
        let mut done = Vec::new();
        if let Some(l) = lexicon {
            self.lexicon.replace(l);
            done.push("lexicon");
        }
        if let Some(r) = registry {
            self.registry.replace(r);
            done.push("registry");
        }
        Ok(done)
    }
}

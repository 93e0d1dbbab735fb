//! ULID identifiers: 26 characters, lexicographically sortable by creation time.

use parking_lot::Mutex;
use ulid::{Generator, Ulid};

/// Monotonic ULID source. Ids from one source are strictly increasing, even
/// within a millisecond.
pub struct IdSource {
    inner: Mutex<(Generator, Option<Ulid>)>,
}

impl IdSource {
    pub fn new() -> Self {
        Self {
            inner: Mutex::new((Generator::new(), None)),
        }
    }

    /// Starts after `floor`, so new ids sort after ids already persisted.
    pub fn after(floor: Option<Ulid>) -> Self {
        Self {
            inner: Mutex::new((Generator::new(), floor)),
        }
    }

    pub fn next(&self) -> Ulid {
        let mut guard = self.inner.lock();
        let (gen, last) = &mut *guard;
        let mut id = gen.generate().unwrap_or_else(|_| Ulid::new());
        if let Some(prev) = *last {
            if id <= prev {
                id = prev.increment().unwrap_or(prev);
            }
        }
        *last = Some(id);
        id
    }
}

impl std::fmt::Debug for IdSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IdSource").field("last", &self.inner.lock().1).finish()
    }
}

impl Default for IdSource {
    fn default() -> Self {
        Self::new()
    }
}

//! Prompt classification and duel selection.
//!
//! A prompt is scored against the lexicon per dimension; the best-scoring
//! dimension picks the pair of personas that answer it. Age and gender pairs
//! are forced. Race has four variants, so the pair prefers variants named in
//! the prompt and otherwise draws from a splitmix64 stream over the request seed.

mod lexicon;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub use lexicon::{Lexicon, LexiconError, SharedLexicon};

use crate::persona::{variants_for, BiasDimension, PersonaSpec, PersonaVariant, Registry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub dimension: Option<BiasDimension>,
    pub match_counts: BTreeMap<BiasDimension, usize>,
    /// Distinct matched terms per race variant; only variants with a match appear.
    pub variant_matches: BTreeMap<PersonaVariant, usize>,
}

impl Classification {
    pub fn matched_variants(&self) -> BTreeSet<PersonaVariant> {
        self.variant_matches.keys().copied().collect()
    }

    /// A classification naming `dimension` with no term evidence behind it.
    pub fn forced(dimension: BiasDimension) -> Self {
        let mut match_counts: BTreeMap<_, _> = BiasDimension::ALL.iter().map(|d| (*d, 0)).collect();
        match_counts.insert(dimension, 1);
        Self {
            dimension: Some(dimension),
            match_counts,
            variant_matches: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuelSelection {
    pub persona_a: PersonaSpec,
    pub persona_b: PersonaSpec,
    pub dimension: BiasDimension,
    pub seed: u64,
}

/// splitmix64 generator. Used for race pair selection so that every
/// implementation picks the same pair for the same seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

fn contains_phrase(words: &[String], phrase: &str) -> bool {
    let needle: Vec<&str> = phrase.split(' ').collect();
    words
        .windows(needle.len())
        .any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
}

pub fn classify(prompt: &str, lexicon: &Lexicon) -> Classification {
    let words = lexicon::words(prompt);
    let mut match_counts = BTreeMap::new();
    for dim in BiasDimension::ALL {
        let n = lexicon
            .dimension_terms(dim)
            .into_iter()
            .filter(|t| contains_phrase(&words, t))
            .count();
        match_counts.insert(dim, n);
    }
    let variant_matches = variants_for(BiasDimension::Race)
        .into_iter()
        .filter_map(|v| {
            let n = lexicon
                .variant_terms(v)
                .iter()
                .filter(|t| contains_phrase(&words, t))
                .count();
            (n > 0).then_some((v, n))
        })
        .collect();

    // ALL is in priority order, so the first maximum wins ties
    let mut dimension = None;
    let mut best = 0;
    for dim in BiasDimension::ALL {
        if match_counts[&dim] > best {
            best = match_counts[&dim];
            dimension = Some(dim);
        }
    }
    Classification {
        dimension,
        match_counts,
        variant_matches,
    }
}

fn race_pair(classification: &Classification, seed: u64) -> (PersonaVariant, PersonaVariant) {
    let race = variants_for(BiasDimension::Race);
    let mut rng = SplitMix64::new(seed);
    let mut ranked: Vec<(PersonaVariant, usize)> =
        classification.variant_matches.iter().map(|(v, n)| (*v, *n)).collect();
    // most matched terms first, canonical order among equals
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    match ranked.as_slice() {
        [first, second, ..] => (first.0, second.0),
        [only] => {
            let rest: Vec<_> = race.iter().copied().filter(|v| *v != only.0).collect();
            let pick = rest[(rng.next_u64() % rest.len() as u64) as usize];
            (only.0, pick)
        }
        [] => {
            let first = race[(rng.next_u64() % race.len() as u64) as usize];
            let rest: Vec<_> = race.iter().copied().filter(|v| *v != first).collect();
            let second = rest[(rng.next_u64() % rest.len() as u64) as usize];
            (first, second)
        }
    }
}

/// Picks the two personas for a duel, or `None` when the prompt matched nothing.
pub fn select_duel(classification: &Classification, registry: &Registry, seed: u64) -> Option<DuelSelection> {
    let dimension = classification.dimension?;
    let (x, y) = match dimension {
        BiasDimension::Age | BiasDimension::Gender => {
            let pair = variants_for(dimension);
            (pair[0], pair[1])
        }
        BiasDimension::Race => race_pair(classification, seed),
    };
    let (a, b) = if x <= y { (x, y) } else { (y, x) };
    Some(DuelSelection {
        persona_a: registry.get(a).clone(),
        persona_b: registry.get(b).clone(),
        dimension,
        seed,
    })
}

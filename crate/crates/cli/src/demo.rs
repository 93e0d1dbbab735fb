//! Synthetic rating set written by `seed-demo`.
//!
//! 156 ratings across the eight personas. The Young persona gets 50 ratings
//! with mean 5.26; Australoid has the highest mean (91/15, about 6.07).

use biasgpt_core::PersonaVariant;

/// (persona, number of ratings, sum of ratings).
pub const DEMO_FIXTURE: [(PersonaVariant, usize, u32); 8] = [
    (PersonaVariant::Young, 50, 263),
    (PersonaVariant::Old, 8, 43),
    (PersonaVariant::Male, 19, 108),
    (PersonaVariant::Female, 12, 66),
    (PersonaVariant::Asian, 14, 72),
    (PersonaVariant::White, 19, 110),
    (PersonaVariant::Black, 19, 107),
    (PersonaVariant::Australoid, 15, 91),
];

const PATTERN: [u8; 10] = [5, 3, 7, 6, 8, 4, 9, 2, 10, 1];

/// `count` ratings in 1..=10 adding up to `sum`. Deterministic.
///
/// # Panics
/// If no such list exists (`sum` outside `count..=10 * count`).
pub fn ratings_with_sum(count: usize, sum: u32) -> Vec<u8> {
    assert!(
        (count as u32..=10 * count as u32).contains(&sum),
        "{count} ratings cannot sum to {sum}"
    );
    let mut out: Vec<u8> = PATTERN.iter().copied().cycle().take(count).collect();
    let mut diff = sum as i64 - out.iter().map(|&v| v as i64).sum::<i64>();
    let mut i = 0;
    while diff != 0 {
        let v = &mut out[i % count];
        if diff > 0 && *v < 10 {
            *v += 1;
            diff -= 1;
        } else if diff < 0 && *v > 1 {
            *v -= 1;
            diff += 1;
        }
        i += 1;
    }
    out
}

/// The whole fixture, interleaved round-robin across personas.
pub fn demo_ratings() -> Vec<(PersonaVariant, u8)> {
    let lists: Vec<(PersonaVariant, Vec<u8>)> = DEMO_FIXTURE
        .iter()
        .map(|&(v, n, s)| (v, ratings_with_sum(n, s)))
        .collect();
    let longest = lists.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..longest {
        for (v, l) in &lists {
            if let Some(&r) = l.get(i) {
                out.push((*v, r));
            }
        }
    }
    out
}

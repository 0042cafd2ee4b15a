//! Hashed bag-of-tokens features.
//!
//! Hash function: 64-bit FNV-1a over the UTF-8 bytes of the feature key, reduced
//! modulo the feature dimension. Keys are the lowercased token for unigrams and
//! `"{left} {right}"` for adjacent bigrams; tokens never contain spaces, so the two
//! key families cannot collide by construction. Token-window features for sequence
//! tasks use keys of the form `"{slot}={value}"`.

use std::hash::Hasher;

use fnv::FnvHasher;

/// Sparse feature vector: sorted, de-duplicated `(index, weight)` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    dimension: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Builds a vector from raw entries, summing duplicate indices.
    pub fn from_entries(dimension: usize, mut entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.iter().all(|&(i, w)| (i as usize) < dimension && w.is_finite()));
        entries.sort_unstable_by_key(|&(i, _)| i);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += w,
                _ => merged.push((i, w)),
            }
        }
        Self {
            dimension,
            entries: merged,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&(_, w)| w == 0.0)
    }

    /// Weight at `index` (0 when absent).
    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }
}

pub fn hash_index(key: &str, dimension: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(key.as_bytes());
    (h.finish() % dimension as u64) as u32
}

/// Lowercases and splits on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Unigram + adjacent-bigram counts hashed into `[0, dimension)`.
pub fn featurize(text: &str, dimension: usize) -> FeatureVector {
    assert!(dimension >= 2, "feature dimension must be at least 2");
    let tokens = tokenize(text);
    let mut entries = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        entries.push((hash_index(t, dimension), 1.0));
    }
    let mut key = String::new();
    for pair in tokens.windows(2) {
        key.clear();
        key.push_str(&pair[0]);
        key.push(' ');
        key.push_str(&pair[1]);
        entries.push((hash_index(&key, dimension), 1.0));
    }
    FeatureVector::from_entries(dimension, entries)
}

/// Context half-width for token-window features.
pub const TOKEN_WINDOW: usize = 2;

/// Features for token `position` of a sentence: the token itself, its neighbours
/// within ±[`TOKEN_WINDOW`] (position-specific), a capitalisation shape and a
/// 3-character suffix.
pub fn featurize_token(tokens: &[String], position: usize, dimension: usize) -> FeatureVector {
    assert!(dimension >= 2, "feature dimension must be at least 2");
    let word = &tokens[position];
    let lower = word.to_lowercase();
    let mut keys = Vec::with_capacity(4 + 2 * TOKEN_WINDOW);
    keys.push(format!("w={lower}"));
    keys.push(format!("shape={}", shape(word)));
    let suffix: String = {
        let chars: Vec<char> = lower.chars().collect();
        chars[chars.len().saturating_sub(3)..].iter().collect()
    };
    keys.push(format!("suf={suffix}"));
    for offset in 1..=TOKEN_WINDOW {
        let left = position
            .checked_sub(offset)
            .map(|p| tokens[p].to_lowercase())
            .unwrap_or_else(|| "<s>".to_string());
        let right = tokens
            .get(position + offset)
            .map(|t| t.to_lowercase())
            .unwrap_or_else(|| "</s>".to_string());
        keys.push(format!("w-{offset}={left}"));
        keys.push(format!("w+{offset}={right}"));
    }
    let entries = keys.iter().map(|k| (hash_index(k, dimension), 1.0)).collect();
    FeatureVector::from_entries(dimension, entries)
}

fn shape(word: &str) -> &'static str {
    let mut chars = word.chars();
    match chars.next() {
        None => "empty",
        Some(c) if c.is_uppercase() => {
            if chars.all(|c| c.is_uppercase() || !c.is_alphabetic()) {
                "upper"
            } else {
                "title"
            }
        }
        Some(c) if c.is_numeric() => "digit",
        Some(c) if c.is_alphabetic() => "lower",
        Some(_) => "punct",
    }
}

//! Seeded synthetic corpora with known ground truth.
//!
//! Text classification: each class owns a signature vocabulary and is paired with a
//! confuser class. An example mixes words of its own class and its confuser's
//! signature, plus shared filler words. Most examples lean clearly towards their
//! own class. A configurable share are boundary examples: their own-class words
//! come from a separate boundary vocabulary and they carry more confuser words, so
//! a model is less certain about them.
//!
//! Sequence labeling: sentences of filler tokens with embedded entity spans drawn
//! from per-tag vocabularies, some of which overlap between tags.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Input, Label, LabelSpace, OUTSIDE_TAG};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSynthConfig {
    pub n_examples: usize,
    pub n_classes: usize,
    pub signature_words: usize,
    /// Size of each class's boundary vocabulary, used in place of the signature
    /// vocabulary by boundary examples.
    pub boundary_words: usize,
    pub filler_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of tokens that are filler.
    pub filler_rate: f64,
    /// Confuser share of signature words for ordinary examples, drawn from
    /// `[0, interior_confusion]`.
    pub interior_confusion: f64,
    /// Fraction of examples near the class boundary.
    pub boundary_rate: f64,
    /// Confuser share range `[lo, hi]` for boundary examples.
    pub boundary_confusion: [f64; 2],
    pub seed: u64,
}

impl Default for TextSynthConfig {
    fn default() -> Self {
        Self {
            n_examples: 2000,
            n_classes: 8,
            signature_words: 40,
            boundary_words: 20,
            filler_words: 300,
            min_len: 6,
            max_len: 14,
            filler_rate: 0.3,
            interior_confusion: 0.05,
            boundary_rate: 0.2,
            boundary_confusion: [0.3, 0.5],
            seed: 0,
        }
    }
}

impl TextSynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::config("n_examples", "must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "need at least 2 classes"));
        }
        if self.signature_words == 0 || self.boundary_words == 0 || self.filler_words == 0 {
            return Err(Error::config("signature_words", "vocabularies must be non-empty"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config("min_len", "need 0 < min_len <= max_len"));
        }
        if !(0.0..1.0).contains(&self.filler_rate) {
            return Err(Error::config("filler_rate", "must lie in [0, 1)"));
        }
        if !(0.0..=0.5).contains(&self.interior_confusion) {
            return Err(Error::config("interior_confusion", "must lie in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.boundary_rate) {
            return Err(Error::config("boundary_rate", "must lie in [0, 1]"));
        }
        let [lo, hi] = self.boundary_confusion;
        if !(0.0 <= lo && lo <= hi && hi <= 0.5) {
            return Err(Error::config("boundary_confusion", "need 0 <= lo <= hi <= 0.5"));
        }
        Ok(())
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pronounceable token for `(namespace, index)`; distinct inputs give
/// distinct words.
fn word(namespace: &str, index: usize) -> String {
    let mut out = String::from(namespace);
    let mut i = index;
    loop {
        out.push_str(ONSETS[i % ONSETS.len()]);
        i /= ONSETS.len();
        out.push_str(VOWELS[i % VOWELS.len()]);
        i /= VOWELS.len();
        if i == 0 {
            break;
        }
    }
    out
}

/// Class names used by [`generate_text`].
pub fn class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes).map(|c| format!("intent_{c}")).collect()
}

/// Class paired with `c` (`c ^ 1`, wrapped for an odd last class).
pub fn confuser(c: usize, n_classes: usize) -> usize {
    let partner = c ^ 1;
    if partner < n_classes {
        partner
    } else {
        0
    }
}

/// Generates a clean text-classification dataset: every label equals its ground truth.
pub fn generate_text(config: &TextSynthConfig) -> Result<Dataset> {
    config.validate()?;
    let k = config.n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let signatures: Vec<Vec<String>> = (0..k)
        .map(|c| (0..config.signature_words).map(|j| word(&class_prefix(c), j)).collect())
        .collect();
    let boundary: Vec<Vec<String>> = (0..k)
        .map(|c| {
            (0..config.boundary_words)
                .map(|j| word(&format!("{}b", class_prefix(c)), j))
                .collect()
        })
        .collect();
    let fillers: Vec<String> = (0..config.filler_words).map(|j| word("", j + 7)).collect();
    let examples = (0..config.n_examples)
        .map(|i| {
            let c = i % k;
            let other = confuser(c, k);
            let (own, confusion) = if rng.gen_bool(config.boundary_rate) {
                let [lo, hi] = config.boundary_confusion;
                (&boundary[c], rng.gen_range(lo..=hi))
            } else {
                (&signatures[c], rng.gen_range(0.0..=config.interior_confusion))
            };
            let len = rng.gen_range(config.min_len..=config.max_len);
            let tokens: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.gen_bool(config.filler_rate) {
                        fillers.choose(&mut rng).expect("non-empty")
                    } else if rng.gen_bool(confusion) {
                        signatures[other].choose(&mut rng).expect("non-empty")
                    } else {
                        own.choose(&mut rng).expect("non-empty")
                    }
                    .as_str()
                })
                .collect();
            Example::new(
                i.to_string(),
                Input::Text(tokens.join(" ")),
                Label::Class(c),
                Some(Label::Class(c)),
            )
        })
        .collect();
    Dataset::new("synthetic-text", LabelSpace::classification(class_names(k))?, examples)
}

fn class_prefix(c: usize) -> String {
    // letters keep class vocabularies disjoint from fillers and from each other
    let mut s = String::from("z");
    let mut i = c;
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    s.push('q');
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSynthConfig {
    pub n_sentences: usize,
    pub entity_types: Vec<String>,
    pub words_per_type: usize,
    /// Entity words shared between consecutive types.
    pub shared_words: usize,
    pub filler_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_entities: usize,
    pub seed: u64,
}

impl Default for SequenceSynthConfig {
    fn default() -> Self {
        Self {
            n_sentences: 600,
            entity_types: vec!["PER".into(), "LOC".into(), "ORG".into()],
            words_per_type: 30,
            shared_words: 5,
            filler_words: 150,
            min_len: 6,
            max_len: 14,
            max_entities: 3,
            seed: 0,
        }
    }
}

/// Generates a clean sequence-labeling dataset over tags `O` plus `entity_types`.
pub fn generate_sequences(config: &SequenceSynthConfig) -> Result<Dataset> {
    if config.n_sentences == 0
        || config.entity_types.is_empty()
        || config.min_len < 2
        || config.min_len > config.max_len
    {
        return Err(Error::config(
            "sequence",
            "need sentences, entity types and 2 <= min_len <= max_len",
        ));
    }
    let mut tags = vec![OUTSIDE_TAG.to_string()];
    tags.extend(config.entity_types.iter().cloned());
    let space = LabelSpace::sequence(tags)?;
    let n_types = config.entity_types.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab: Vec<Vec<String>> = (0..n_types)
        .map(|t| {
            let mut words: Vec<String> = (0..config.words_per_type).map(|j| word(&class_prefix(t), j)).collect();
            if n_types > 1 {
                // pair p is shared by types p and p + 1 (mod n)
                let prev = (t + n_types - 1) % n_types;
                for pair in [t, prev] {
                    words.extend((0..config.shared_words).map(|j| word(&format!("{}x", class_prefix(pair)), j)));
                }
                words.dedup();
            }
            words
        })
        .collect();
    let fillers: Vec<String> = (0..config.filler_words).map(|j| word("", j + 7)).collect();
    let examples = (0..config.n_sentences)
        .map(|i| {
            let len = rng.gen_range(config.min_len..=config.max_len);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| fillers.choose(&mut rng).expect("non-empty").clone())
                .collect();
            let mut tag_ids = vec![0usize; len];
            let n_ent = rng.gen_range(1..=config.max_entities.max(1));
            for _ in 0..n_ent {
                let t = rng.gen_range(0..n_types);
                let span = rng.gen_range(1..=2usize).min(len);
                let start = rng.gen_range(0..=len - span);
                for p in start..start + span {
                    tokens[p] = vocab[t].choose(&mut rng).expect("non-empty").clone();
                    tag_ids[p] = t + 1;
                }
            }
            let label = Label::Tags(tag_ids);
            Example::new(i.to_string(), Input::Tokens(tokens), label.clone(), Some(label))
        })
        .collect();
    Dataset::new("synthetic-sequences", space, examples)
}

/// Corrupts the tags of `round(fraction · n)` sentences: within each chosen
/// sentence every entity token gets a different random tag. Ground truth is kept.
/// Returns the noised dataset and the corrupted ids.
pub fn corrupt_sequences(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Vec<String>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("fraction", "must lie in [0, 1)"));
    }
    let k = d.label_space().len();
    let outside = d
        .label_space()
        .outside_index()
        .ok_or_else(|| Error::InvalidArgument("sequence corruption needs a sequence label space".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (fraction * d.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut rng);
    let mut out = d.clone();
    let mut ids = Vec::new();
    for pos in order {
        if ids.len() == target {
            break;
        }
        let Some(Label::Tags(gt)) = d.examples()[pos].ground_truth().cloned() else {
            continue;
        };
        if gt.iter().all(|&t| t == outside) {
            continue;
        }
        let noisy: Vec<usize> = gt
            .iter()
            .map(|&t| {
                if t == outside {
                    t
                } else {
                    let mut j = rng.gen_range(0..k - 1);
                    if j >= t {
                        j += 1;
                    }
                    j
                }
            })
            .collect();
        out.relabel_original_at(pos, Label::Tags(noisy));
        ids.push(d.examples()[pos].id().to_string());
    }
    Ok((out, ids))
}

/// Seeded split into `(train, test)`, stratified by ground-truth class for
/// classification data. Both parts keep dataset order.
pub fn train_test_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("test_fraction", "must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: std::collections::BTreeMap<Option<usize>, Vec<usize>> = Default::default();
    for (pos, e) in d.examples().iter().enumerate() {
        let key = e.ground_truth().unwrap_or(e.current_label()).as_class();
        groups.entry(key).or_default().push(pos);
    }
    let mut test = Vec::new();
    let mut train = Vec::new();
    for (_, mut members) in groups {
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("split leaves one side empty".into()));
    }
    Ok((
        d.subset(&train, format!("{}-train", d.name()))?,
        d.subset(&test, format!("{}-test", d.name()))?,
    ))
}

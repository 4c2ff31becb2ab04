//! Seeded synthetic data: themed message corpora, Gaussian blobs, and a
//! two-dialect stance corpus with disjoint marker vocabularies.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Corpus, Message, StanceLabel};

pub const LEFT_MARKERS: [&str; 8] = [
    "progressive", "equity", "climate", "union", "welfare", "diversity", "healthcare", "reform",
];
pub const RIGHT_MARKERS: [&str; 8] = [
    "liberty", "taxes", "border", "freedom", "tradition", "security", "enterprise", "faith",
];
pub const DIALECT_MARKER_RATE: f64 = 0.4;
pub const DIALECT_SENTENCE_LEN: std::ops::RangeInclusive<usize> = 24..=32;
pub const SHARED_WORDS: [&str; 16] = [
    "the", "people", "said", "that", "government", "policy", "economy", "today", "news", "report", "new", "plan",
    "state", "leaders", "public", "debate",
];

/// `per_cluster` points around each center with isotropic Gaussian noise.
pub fn gaussian_blobs(centers: &[Vec<f64>], per_cluster: usize, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(centers.len() * per_cluster);
    for c in centers {
        for _ in 0..per_cluster {
            points.push(
                c.iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + sigma * z
                    })
                    .collect(),
            );
        }
    }
    points
}

/// One dialect sentence of 24 to 32 words: `round(marker_rate * len)`
/// positions hold markers drawn from `markers`, the rest shared words.
pub fn dialect_sentence(rng: &mut impl Rng, markers: &[&str], marker_rate: f64) -> String {
    let len = rng.random_range(DIALECT_SENTENCE_LEN);
    let n_markers = ((marker_rate * len as f64).round() as usize).min(len);
    let mut is_marker = vec![false; len];
    for i in rand::seq::index::sample(rng, len, n_markers) {
        is_marker[i] = true;
    }
    is_marker
        .into_iter()
        .map(|m| {
            if m {
                markers[rng.random_range(0..markers.len())]
            } else {
                SHARED_WORDS[rng.random_range(0..SHARED_WORDS.len())]
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `per_side` Left sentences followed by `per_side` Right sentences.
pub fn two_dialect_corpus(per_side: usize, seed: u64) -> Vec<(String, StanceLabel)> {
    two_dialect_corpus_with_rate(per_side, DIALECT_MARKER_RATE, seed)
}

pub fn two_dialect_corpus_with_rate(per_side: usize, marker_rate: f64, seed: u64) -> Vec<(String, StanceLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_side);
    for _ in 0..per_side {
        out.push((dialect_sentence(&mut rng, &LEFT_MARKERS, marker_rate), StanceLabel::Left));
    }
    for _ in 0..per_side {
        out.push((dialect_sentence(&mut rng, &RIGHT_MARKERS, marker_rate), StanceLabel::Right));
    }
    out
}

/// Unlabeled background text for base-LM pretraining: the same sentence
/// shape, with markers drawn from both vocabularies so no sentence carries a
/// consistent stance.
pub fn mixed_dialect_corpus(n: usize, marker_rate: f64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let markers: Vec<&str> = LEFT_MARKERS.iter().chain(&RIGHT_MARKERS).copied().collect();
    (0..n).map(|_| dialect_sentence(&mut rng, &markers, marker_rate)).collect()
}

/// Topic word lists used by [`themed_corpus`]; each topic is one latent claim.
pub const TOPICS: [[&str; 6]; 4] = [
    ["vaccine", "mandate", "booster", "clinic", "dose", "immunity"],
    ["border", "troops", "invasion", "sanctions", "tanks", "ceasefire"],
    ["island", "coast", "guard", "shoal", "fishing", "patrol"],
    ["inflation", "prices", "wages", "rent", "grocery", "fuel"],
];

/// A corpus of `n` messages over `themes` themes, drawn from `topics` latent
/// topics. Each message uses four words of its topic plus one filler word,
/// so hash embeddings of same-topic messages are close. Timestamps are one
/// minute apart in generation order; stances cycle over the five labels.
pub fn themed_corpus(n: usize, themes: usize, topics: usize, seed: u64) -> Corpus {
    let topics = topics.clamp(1, TOPICS.len());
    let themes = themes.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap().timestamp();
    let messages = (0..n)
        .map(|i| {
            let topic = &TOPICS[rng.random_range(0..topics)];
            let mut words: Vec<&str> = (0..4).map(|_| topic[rng.random_range(0..topic.len())]).collect();
            words.push(SHARED_WORDS[rng.random_range(0..SHARED_WORDS.len())]);
            Message {
                id: format!("m{i:04}"),
                text: words.join(" "),
                timestamp: Utc.timestamp_opt(base + 60 * i as i64, 0).unwrap(),
                theme: format!("theme-{}", rng.random_range(0..themes)),
                stance: Some(StanceLabel::ALL[i % 5]),
            }
        })
        .collect();
    Corpus::from_messages(messages).expect("generated ids are unique")
}

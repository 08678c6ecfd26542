//! Deterministic synthetic corpora: disjoint training text slices,
//! instruction/response datasets for finetuning, and natural-looking
//! prompts for perplexity baselines. Everything is a pure function of
//! its arguments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const WORDS: &[&str] = &[
    "the", "a", "river", "stone", "light", "wind", "tree", "bird", "cloud", "rain", "moon",
    "sun", "field", "path", "house", "door", "fire", "water", "night", "morning", "runs",
    "falls", "rises", "turns", "holds", "carries", "follows", "crosses", "covers", "warms",
    "over", "under", "near", "through", "beyond", "against", "beside", "toward", "quiet",
    "bright", "cold", "warm", "slow", "deep", "old", "small", "long", "gray",
];

fn slice_rng(purpose: u64, slice: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ slice)
}

fn sentence(rng: &mut ChaCha20Rng) -> String {
    let n = rng.gen_range(4..10);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        parts.push(WORDS[rng.gen_range(0..WORDS.len())]);
    }
    let mut s = parts.join(" ");
    s.push('.');
    s
}

/// A reproducible plain-text corpus slice of at least `len` bytes.
/// Different slice indices draw from independent generator streams, so
/// their contents are effectively disjoint.
pub fn text_slice(slice: u64, len: usize) -> Vec<u8> {
    let mut rng = slice_rng(1, slice);
    let mut out = Vec::with_capacity(len + 64);
    while out.len() < len {
        out.extend_from_slice(sentence(&mut rng).as_bytes());
        out.push(b' ');
    }
    out.truncate(len);
    out
}

/// A reproducible instruction/response dataset. Responses follow a
/// pattern the model can actually learn at desk scale.
pub fn instruction_dataset(slice: u64, n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut rng = slice_rng(2, slice);
    (0..n)
        .map(|i| {
            let topic = WORDS[rng.gen_range(0..WORDS.len())];
            let verb = WORDS[20 + rng.gen_range(0..10)];
            let instr = format!("describe the {topic} (item {i})");
            let resp = format!("the {topic} {verb} here.");
            (instr.into_bytes(), resp.into_bytes())
        })
        .collect()
}

/// Natural-looking prompts drawn from the same word distribution as the
/// training text.
pub fn natural_prompts(n: usize, len: usize) -> Vec<Vec<u8>> {
    let mut rng = slice_rng(3, 0);
    (0..n)
        .map(|_| {
            let mut s = String::new();
            while s.len() < len {
                if !s.is_empty() {
                    s.push(' ');
                }
                s.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
            }
            s.truncate(len);
            s.into_bytes()
        })
        .collect()
}

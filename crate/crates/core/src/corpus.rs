//! Word-level text ingestion and truncated-BPTT batching.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

/// Token/id bijection. Ids 0 and 1 are `<unk>` and `<eos>`; the rest are
/// ordered by descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

/// Whitespace tokens of every line, each line followed by `<eos>`.
fn line_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .flat_map(|line| line.split_whitespace().chain(std::iter::once(EOS_TOKEN)))
}

pub fn build_vocab(text: &str, min_count: u64) -> Result<Vocab> {
    if text.split_whitespace().next().is_none() {
        return Err(Error::Corpus("cannot build a vocabulary from empty text".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in line_tokens(text) {
        *counts.entry(tok).or_default() += 1;
    }
    let mut unk = counts.remove(UNK_TOKEN).unwrap_or(0);
    let eos = counts.remove(EOS_TOKEN).unwrap_or(0);
    let mut kept: Vec<(&str, u64)> = Vec::new();
    for (tok, c) in counts {
        if c >= min_count.max(1) {
            kept.push((tok, c));
        } else {
            unk += c;
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
    let mut freqs = vec![unk, eos];
    for (tok, c) in kept {
        tokens.push(tok.to_string());
        freqs.push(c);
    }
    Ok(Vocab::from_parts(tokens, freqs))
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            freqs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }

    /// Ids of `text`; unknown words become `<unk>`, every line ends in
    /// `<eos>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        line_tokens(text)
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// `token<TAB>id<TAB>freq` lines.
    pub fn to_tsv(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.freqs)
            .enumerate()
            .map(|(id, (t, f))| format!("{t}\t{id}\t{f}\n"))
            .collect()
    }

    pub fn from_tsv(tsv: &str) -> Result<Vocab> {
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (lineno, line) in tsv.lines().enumerate() {
            let bad = || Error::Corpus(format!("vocab line {}: expected token, id, freq", lineno + 1));
            let mut cols = line.split('\t');
            let (tok, id, freq) = (
                cols.next().ok_or_else(bad)?,
                cols.next().ok_or_else(bad)?,
                cols.next().ok_or_else(bad)?,
            );
            let id: usize = id.parse().map_err(|_| bad())?;
            if id != tokens.len() {
                return Err(Error::Corpus(format!(
                    "vocab line {}: id {id} out of order",
                    lineno + 1
                )));
            }
            tokens.push(tok.to_string());
            freqs.push(freq.parse().map_err(|_| bad())?);
        }
        Vocab::from_pairs(tokens.into_iter().zip(freqs).collect())
    }

    /// Rebuilds a vocabulary from `(token, freq)` pairs in id order.
    pub fn from_pairs(pairs: Vec<(String, u64)>) -> Result<Vocab> {
        if pairs.len() < 2 || pairs[UNK].0 != UNK_TOKEN || pairs[EOS].0 != EOS_TOKEN {
            return Err(Error::Corpus(
                "vocabulary must start with <unk> and <eos>".into(),
            ));
        }
        let mut seen = HashSet::new();
        if let Some((dup, _)) = pairs.iter().find(|(t, _)| !seen.insert(t.as_str())) {
            return Err(Error::Corpus(format!("duplicate vocabulary entry {dup:?}")));
        }
        let (tokens, freqs) = pairs.into_iter().unzip();
        Ok(Vocab::from_parts(tokens, freqs))
    }
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path)
        .map_err(|e| Error::Corpus(format!("cannot read {}: {e}", path.display())))
}

/// `B` parallel token streams cut into windows of length `T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchStream {
    batch_size: usize,
    bptt: usize,
    streams: Vec<Vec<usize>>,
}

/// One window. `inputs[b][t]` is followed by `targets[b][t]` in stream `b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    /// Window length (the last window of an epoch may be shorter than `T`).
    pub fn len(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs flattened as `[t][b]`.
    pub fn inputs_time_major(&self) -> Vec<usize> {
        time_major(&self.inputs)
    }

    pub fn targets_time_major(&self) -> Vec<usize> {
        time_major(&self.targets)
    }
}

fn time_major(rows: &[Vec<usize>]) -> Vec<usize> {
    let t_len = rows[0].len();
    (0..t_len)
        .flat_map(|t| rows.iter().map(move |r| r[t]))
        .collect()
}

/// Lays `ids` out as `B` contiguous streams of `⌊len/B⌋` tokens, dropping
/// the remainder. Every stream needs at least two tokens (one target);
/// streams shorter than `T + 1` simply give a single short window.
pub fn batchify(ids: &[usize], batch_size: usize, bptt: usize) -> Result<BatchStream> {
    if batch_size == 0 || bptt == 0 {
        return Err(Error::Corpus(format!(
            "batch size and bptt length must be positive, got {batch_size} and {bptt}"
        )));
    }
    let required = batch_size * 2;
    if ids.len() < required {
        return Err(Error::Corpus(format!(
            "need at least {required} tokens for batch size {batch_size}, got {}",
            ids.len()
        )));
    }
    let len = ids.len() / batch_size;
    let streams = ids
        .chunks_exact(len)
        .take(batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(BatchStream {
        batch_size,
        bptt,
        streams,
    })
}

impl BatchStream {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn bptt(&self) -> usize {
        self.bptt
    }

    pub fn stream_len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn streams(&self) -> &[Vec<usize>] {
        &self.streams
    }

    /// Number of predicted tokens per epoch.
    pub fn num_targets(&self) -> usize {
        self.batch_size * (self.stream_len() - 1)
    }

    pub fn num_batches(&self) -> usize {
        (self.stream_len() - 1).div_ceil(self.bptt)
    }

    /// Windows in order. Every stream position after the first is a target
    /// exactly once; the final window is shorter when `T` does not divide
    /// `L - 1`.
    pub fn batches(&self) -> impl Iterator<Item = Batch> + '_ {
        let last = self.stream_len() - 1;
        (0..last).step_by(self.bptt).map(move |start| {
            let end = (start + self.bptt).min(last);
            Batch {
                inputs: self.streams.iter().map(|s| s[start..end].to_vec()).collect(),
                targets: self
                    .streams
                    .iter()
                    .map(|s| s[start + 1..end + 1].to_vec())
                    .collect(),
            }
        })
    }
}

/// A seeded class-based bigram grammar producing word-level text with
/// learnable structure. Used to build reproducible desk-scale corpora.
///
/// Each word belongs to one class; words inside a class follow a Zipf
/// distribution and the next class depends on the current one.
#[derive(Clone, Debug)]
pub struct SyntheticGrammar {
    words: Vec<Vec<String>>,
    word_weights: Vec<f64>,
    successors: Vec<Vec<(usize, f64)>>,
    starts: Vec<usize>,
    end_prob: f64,
}

const SYLLABLES: &[&str] = &[
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki", "ko", "ku", "la",
    "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "ra", "re",
    "ri", "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi",
];

impl SyntheticGrammar {
    pub fn new(seed: u64, classes: usize, words_per_class: usize) -> Self {
        assert!(classes >= 2 && words_per_class >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used = HashSet::new();
        let words = (0..classes)
            .map(|_| {
                (0..words_per_class)
                    .map(|_| loop {
                        let syl = rng.gen_range(2..=3);
                        let w: String = (0..syl)
                            .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
                            .collect();
                        if used.insert(w.clone()) {
                            break w;
                        }
                    })
                    .collect()
            })
            .collect();
        let word_weights = (1..=words_per_class).map(|r| 1.0 / r as f64).collect();
        let fanout = 4.min(classes);
        let successors = (0..classes)
            .map(|_| {
                let mut next = Vec::with_capacity(fanout);
                while next.len() < fanout {
                    let c = rng.gen_range(0..classes);
                    if !next.iter().any(|&(p, _)| p == c) {
                        next.push((c, rng.gen_range(0.2..1.0)));
                    }
                }
                next
            })
            .collect();
        let starts = (0..classes.min(8)).map(|_| rng.gen_range(0..classes)).collect();
        SyntheticGrammar {
            words,
            word_weights,
            successors,
            starts,
            end_prob: 0.08,
        }
    }

    pub fn vocabulary_size(&self) -> usize {
        self.words.iter().map(Vec::len).sum()
    }

    /// Sentences, one per line, until the text reaches `target_bytes`.
    pub fn sample_text(&self, seed: u64, target_bytes: usize) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let word_dist = WeightedIndex::new(&self.word_weights).expect("positive weights");
        let next_dists: Vec<WeightedIndex<f64>> = self
            .successors
            .iter()
            .map(|s| WeightedIndex::new(s.iter().map(|&(_, w)| w)).expect("positive weights"))
            .collect();
        let mut out = String::with_capacity(target_bytes + 256);
        while out.len() < target_bytes {
            let mut class = self.starts[rng.gen_range(0..self.starts.len())];
            let mut first = true;
            loop {
                if !first {
                    out.push(' ');
                }
                first = false;
                out.push_str(&self.words[class][word_dist.sample(&mut rng)]);
                if rng.gen_bool(self.end_prob) {
                    break;
                }
                class = self.successors[class][next_dists[class].sample(&mut rng)].0;
            }
            out.push('\n');
        }
        out
    }
}

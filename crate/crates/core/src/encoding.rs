//! Tokenization, vocabulary, and position-weighted line encodings.
//!
//! Generated programs use a spaced token surface, so tokenization is plain
//! whitespace splitting and `detokenize(tokenize(line)) == line` holds for
//! every generated line. Integers are ordinary word tokens: the model gets
//! no numeric parsing anywhere and has to learn magnitude on its own.
//!
//! A line of `t` words embeds to the position-weighted sum
//! `m = sum_j l_j * E[x_j]` where the weight of word `j` in dimension `k`
//! is `(1 - j/t) - (k/d) * (1 - 2j/t)` with `j`, `k` 1-based. Each line
//! uses its own effective length `t`; padding contributes nothing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::corpus::{Label, ProgramSample};

/// Reserved index for padding. Its embedding is pinned to the zero vector.
pub const PAD: usize = 0;
/// Reserved index for tokens never seen while building the vocabulary.
pub const UNK: usize = 1;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Splits a line of the generated token surface into word tokens.
pub fn tokenize(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Inverse of [`tokenize`] on generator output.
pub fn detokenize(tokens: &[&str]) -> String {
    tokens.join(" ")
}

/// Bijective token/index map with reserved padding and unknown entries.
///
/// Tokens are numbered in first-occurrence order over the corpus, so the
/// same corpus always yields the same vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn reserved() -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        vocab.insert(PAD_TOKEN);
        vocab.insert(UNK_TOKEN);
        vocab
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Builds the vocabulary of a training corpus (story and query lines).
    pub fn build(corpus: &[ProgramSample]) -> Result<Self, EncodeError> {
        if corpus.is_empty() {
            return Err(EncodeError::EmptyCorpus);
        }
        let mut vocab = Vocabulary::reserved();
        for sample in corpus {
            for line in sample.story.iter().chain(std::iter::once(&sample.query)) {
                for token in tokenize(line) {
                    vocab.insert(token);
                }
            }
        }
        Ok(vocab)
    }

    /// Index of `token`, falling back to [`UNK`] for unseen tokens.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One token per line, indices implicit from line order.
    pub fn save(&self, path: &Path) -> Result<(), EncodeError> {
        let mut out = BufWriter::new(File::create(path)?);
        for token in &self.tokens {
            writeln!(out, "{token}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncodeError> {
        let reader = BufReader::new(File::open(path)?);
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for line in reader.lines() {
            vocab.insert(&line?);
        }
        if vocab.tokens.first().map(String::as_str) != Some(PAD_TOKEN)
            || vocab.tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(EncodeError::BadVocabFile);
        }
        Ok(vocab)
    }
}

/// Convenience alias for [`Vocabulary::build`].
pub fn build_vocab(corpus: &[ProgramSample]) -> Result<Vocabulary, EncodeError> {
    Vocabulary::build(corpus)
}

/// Weight of word `j` (1-based) in dimension `k` (1-based) for a line of
/// `words` words embedded into `dim` dimensions.
pub fn position_weight(j: usize, words: usize, k: usize, dim: usize) -> f64 {
    let j = j as f64;
    let t = words as f64;
    let k = k as f64;
    let d = dim as f64;
    (1.0 - j / t) - (k / d) * (1.0 - 2.0 * j / t)
}

/// Full `words x dim` weight matrix; entry `(j-1, k-1)` is
/// [`position_weight`]`(j, words, k, dim)`.
pub fn position_weights(words: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((words, dim), |(j, k)| {
        position_weight(j + 1, words, k + 1, dim)
    })
}

/// Position-weighted sum of token embeddings; `ids` holds only the real
/// tokens of the line (no padding).
pub fn embed_line(ids: &[usize], table: &Array2<f64>) -> Array1<f64> {
    let dim = table.ncols();
    let mut out = Array1::zeros(dim);
    let t = ids.len();
    for (j, &id) in ids.iter().enumerate() {
        let row = table.row(id);
        for k in 0..dim {
            out[k] += position_weight(j + 1, t, k + 1, dim) * row[k];
        }
    }
    out
}

/// Token-level variant of [`embed_line`] with a capacity check.
pub fn encode_line(
    tokens: &[&str],
    vocab: &Vocabulary,
    table: &Array2<f64>,
    max_words: usize,
) -> Result<Array1<f64>, EncodeError> {
    if tokens.len() > max_words {
        return Err(EncodeError::LineTooLong {
            words: tokens.len(),
            max_words,
        });
    }
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    Ok(embed_line(&ids, table))
}

/// A sample as padded index matrices, ready for the model.
#[derive(Debug, Clone)]
pub struct EncodedSample {
    /// `mem_slots x max_words` token indices, padded with [`PAD`].
    pub story_ids: Array2<usize>,
    /// Real word count of each slot; zero for empty slots.
    pub story_lens: Vec<usize>,
    /// Number of real story lines (they occupy the leading slots).
    pub n_lines: usize,
    pub query_ids: Vec<usize>,
    pub query_len: usize,
    pub label: Label,
}

impl EncodedSample {
    /// Ids of the real tokens in slot `i`.
    pub fn line(&self, i: usize) -> ArrayView1<'_, usize> {
        self.story_ids.row(i).slice_move(ndarray::s![..self.story_lens[i]])
    }

    pub fn query(&self) -> &[usize] {
        &self.query_ids[..self.query_len]
    }
}

/// Turns program text into [`EncodedSample`]s against a fixed vocabulary,
/// memory capacity, and per-line word capacity.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub mem_slots: usize,
    pub max_words: usize,
}

impl Encoder {
    /// Builds the vocabulary from `corpus` and sizes `max_words` to its
    /// longest line.
    pub fn fit(corpus: &[ProgramSample], mem_slots: usize) -> Result<Self, EncodeError> {
        let vocab = Vocabulary::build(corpus)?;
        let max_words = corpus
            .iter()
            .flat_map(|s| s.story.iter().chain(std::iter::once(&s.query)))
            .map(|line| tokenize(line).len())
            .max()
            .unwrap_or(0);
        Ok(Encoder {
            vocab,
            mem_slots,
            max_words,
        })
    }

    pub fn with_parts(vocab: Vocabulary, mem_slots: usize, max_words: usize) -> Self {
        Encoder {
            vocab,
            mem_slots,
            max_words,
        }
    }

    pub fn encode(&self, sample: &ProgramSample) -> Result<EncodedSample, EncodeError> {
        if sample.story.len() > self.mem_slots {
            return Err(EncodeError::StoryTooLong {
                lines: sample.story.len(),
                mem_slots: self.mem_slots,
            });
        }
        let mut story_ids = Array2::from_elem((self.mem_slots, self.max_words), PAD);
        let mut story_lens = vec![0usize; self.mem_slots];
        for (i, line) in sample.story.iter().enumerate() {
            let tokens = tokenize(line);
            if tokens.len() > self.max_words {
                return Err(EncodeError::LineTooLong {
                    words: tokens.len(),
                    max_words: self.max_words,
                });
            }
            story_lens[i] = tokens.len();
            for (j, token) in tokens.iter().enumerate() {
                story_ids[[i, j]] = self.vocab.id(token);
            }
        }
        let qtokens = tokenize(&sample.query);
        if qtokens.len() > self.max_words {
            return Err(EncodeError::LineTooLong {
                words: qtokens.len(),
                max_words: self.max_words,
            });
        }
        let mut query_ids = vec![PAD; self.max_words];
        for (j, token) in qtokens.iter().enumerate() {
            query_ids[j] = self.vocab.id(token);
        }
        Ok(EncodedSample {
            story_ids,
            story_lens,
            n_lines: sample.story.len(),
            query_ids,
            query_len: qtokens.len(),
            label: sample.label,
        })
    }

    pub fn encode_corpus(&self, samples: &[ProgramSample]) -> Result<Vec<EncodedSample>, EncodeError> {
        samples.iter().map(|s| self.encode(s)).collect()
    }
}

/// Builds the memory value block, memory address block, and initial query
/// embedding for one sample. Row `i` of each block is the encoding of
/// story line `i` under the respective table; the query is encoded with
/// the address table.
pub fn encode_sample(
    sample: &EncodedSample,
    e_val: &Array2<f64>,
    e_addr: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let dim = e_val.ncols();
    let n = sample.story_ids.nrows();
    let mut m_val = Array2::zeros((n, dim));
    let mut m_addr = Array2::zeros((n, dim));
    for i in 0..sample.n_lines {
        let ids = sample.line(i);
        let ids = ids.as_slice().expect("row-major story ids");
        m_val.row_mut(i).assign(&embed_line(ids, e_val));
        m_addr.row_mut(i).assign(&embed_line(ids, e_addr));
    }
    let u0 = embed_line(sample.query(), e_addr);
    (m_val, m_addr, u0)
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("story has {lines} lines but memory holds {mem_slots}")]
    StoryTooLong { lines: usize, mem_slots: usize },
    #[error("line has {words} words but the encoder caps lines at {max_words}")]
    LineTooLong { words: usize, max_words: usize },
    #[error("vocabulary file does not start with the reserved tokens")]
    BadVocabFile,
    #[error("vocabulary I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenConfig, Level, SampleMeta, AccessForm};

    fn text_sample(story: &[&str], query: &str) -> ProgramSample {
        ProgramSample {
            story: story.iter().map(|s| s.to_string()).collect(),
            query: query.to_string(),
            label: Label::Safe,
            meta: SampleMeta {
                level: Level::L1,
                dest_size: 0,
                access_size: 0,
                dest_entity: 0,
                access_form: AccessForm::Direct,
                used_indirect_alloc: false,
                used_realloc: false,
            },
        }
    }

    #[test]
    fn tokenize_splits_every_word() {
        assert_eq!(
            tokenize("char entity_2 [ 53 ] ;"),
            vec!["char", "entity_2", "[", "53", "]", ";"]
        );
        assert_eq!(tokenize("entity_1 = 70 ;"), vec!["entity_1", "=", "70", ";"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_round_trips_generated_lines() {
        let cfg = GenConfig {
            num_samples: 30,
            seed: 3,
            ..GenConfig::default()
        };
        for sample in generate_corpus(&cfg).unwrap() {
            for line in sample.story.iter().chain(std::iter::once(&sample.query)) {
                assert_eq!(&detokenize(&tokenize(line)), line);
            }
        }
    }

    #[test]
    fn tiny_vocab_collapses_duplicates() {
        let corpus = vec![text_sample(&["a b a"], "")];
        let vocab = Vocabulary::build(&corpus).unwrap();
        assert_eq!(vocab.len(), 4); // pad, unk, a, b
        assert_eq!(vocab.id("a"), 2);
        assert_eq!(vocab.id("b"), 3);
        assert_eq!(vocab.id("zzz"), UNK);
    }

    #[test]
    fn default_training_corpus_vocab_size_matches_expectation() {
        let cfg = GenConfig {
            num_samples: 10_000,
            seed: 0,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let vocab = Vocabulary::build(&corpus).unwrap();
        assert!(
            (150..=260).contains(&vocab.len()),
            "vocabulary size {}",
            vocab.len()
        );
    }

    #[test]
    fn vocab_is_deterministic_and_survives_save_load() {
        let cfg = GenConfig {
            num_samples: 100,
            seed: 8,
            ..GenConfig::default()
        };
        let a = Vocabulary::build(&generate_corpus(&cfg).unwrap()).unwrap();
        let b = Vocabulary::build(&generate_corpus(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        a.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), a);
    }

    #[test]
    fn position_weight_closed_forms() {
        let (words, dim) = (7, 9);
        for k in 1..=dim {
            // j == t: the first term vanishes and the weight is k/d.
            let w = position_weight(words, words, k, dim);
            assert!((w - k as f64 / dim as f64).abs() < 1e-15);
        }
        // 2j == t: the second term vanishes and the weight is 1/2.
        for k in 1..=dim {
            let w = position_weight(3, 6, k, dim);
            assert!((w - 0.5).abs() < 1e-15);
        }
        // Spot value straight from the formula.
        let w = position_weight(1, 6, 1, 32);
        assert!((w - 0.8125).abs() < 1e-15);
    }

    #[test]
    fn embed_line_basics() {
        let dim = 4;
        let mut table = Array2::zeros((3, dim));
        table.row_mut(2).assign(&ndarray::arr1(&[1.0, 1.0, 1.0, 1.0]));

        // No tokens: zero vector.
        assert_eq!(embed_line(&[], &table), Array1::<f64>::zeros(dim));

        // One token: weights collapse to k/d.
        let v = embed_line(&[2], &table);
        for k in 0..dim {
            assert!((v[k] - (k + 1) as f64 / dim as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn word_order_changes_the_encoding() {
        let dim = 8;
        let mut table = Array2::zeros((4, dim));
        for (i, mut row) in table.rows_mut().into_iter().enumerate() {
            row.fill(i as f64 + 0.5);
        }
        let ab = embed_line(&[2, 3], &table);
        let ba = embed_line(&[3, 2], &table);
        let diff: f64 = (&ab - &ba).iter().map(|x| x.abs()).sum();
        assert!(diff > 1e-9, "permuted line encodes identically");
    }

    #[test]
    fn encode_line_rejects_overlong_lines() {
        let corpus = vec![text_sample(&["a b a"], "a")];
        let vocab = Vocabulary::build(&corpus).unwrap();
        let table = Array2::zeros((vocab.len(), 4));
        let err = encode_line(&["a", "b", "a", "b"], &vocab, &table, 3).unwrap_err();
        assert!(matches!(err, EncodeError::LineTooLong { .. }));
    }

    #[test]
    fn encoder_shapes_and_capacity() {
        let cfg = GenConfig {
            num_samples: 40,
            seed: 9,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let encoder = Encoder::fit(&corpus, 30).unwrap();
        for sample in &corpus {
            let enc = encoder.encode(sample).unwrap();
            assert_eq!(enc.story_ids.nrows(), 30);
            assert_eq!(enc.story_ids.ncols(), encoder.max_words);
            assert_eq!(enc.n_lines, sample.story.len());
            // Slots past the story are all padding.
            for i in enc.n_lines..30 {
                assert_eq!(enc.story_lens[i], 0);
                assert!(enc.story_ids.row(i).iter().all(|&id| id == PAD));
            }
        }

        let mut big = corpus[0].clone();
        big.story = (0..31).map(|i| format!("int entity_{i} ;")).collect();
        assert!(matches!(
            encoder.encode(&big),
            Err(EncodeError::StoryTooLong { .. })
        ));
    }

    #[test]
    fn encode_sample_empty_story_is_all_zero() {
        let corpus = vec![text_sample(&["a b"], "a")];
        let encoder = Encoder::fit(&corpus, 5).unwrap();
        let empty = text_sample(&[], "a");
        let enc = encoder.encode(&empty).unwrap();
        let v = encoder.vocab.len();
        let e = Array2::from_elem((v, 3), 0.25);
        let (m_val, m_addr, u0) = encode_sample(&enc, &e, &e);
        assert!(m_val.iter().all(|&x| x == 0.0));
        assert!(m_addr.iter().all(|&x| x == 0.0));
        assert!(u0.iter().any(|&x| x != 0.0));
    }
}

//! Multi-hop memory network forward pass.
//!
//! Story lines are encoded twice, into a memory value block (readout
//! content) and a memory address block (attention matching). Each hop
//! computes attention over the address block from the current query
//! embedding, reads a response out of the value block, and adds it to the
//! query. After the final hop a single logistic unit scores the access:
//! towards 0 for unsafe, towards 1 for safe.
//!
//! Both embedding tables are shared across hops; there are no per-hop
//! weights. All arithmetic is in f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::encoding::{self, EncodedSample, PAD};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_HOPS: usize = 3;
pub const DEFAULT_MEM_SLOTS: usize = 30;

/// Standard deviation of the Gaussian parameter initialization.
pub const INIT_STD: f64 = 0.1;

/// The complete learnable state.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Value-path embedding table, one row per token; row [`PAD`] stays zero.
    pub e_val: Array2<f64>,
    /// Address-path embedding table (also encodes the query).
    pub e_addr: Array2<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
    pub hops: usize,
    pub mem_slots: usize,
}

impl ModelParams {
    /// Gaussian-initialized parameters with the padding rows zeroed.
    pub fn init(vocab_size: usize, dim: usize, mem_slots: usize, hops: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng))
        };
        let e_val = draw((vocab_size, dim));
        let e_addr = draw((vocab_size, dim));
        let w_out = Array1::from_shape_simple_fn(dim, || normal.sample(&mut rng));
        let b_out = normal.sample(&mut rng);
        let mut params = ModelParams {
            e_val,
            e_addr,
            w_out,
            b_out,
            hops,
            mem_slots,
        };
        params.zero_padding_rows();
        params
    }

    pub fn zeros(vocab_size: usize, dim: usize, mem_slots: usize, hops: usize) -> Self {
        ModelParams {
            e_val: Array2::zeros((vocab_size, dim)),
            e_addr: Array2::zeros((vocab_size, dim)),
            w_out: Array1::zeros(dim),
            b_out: 0.0,
            hops,
            mem_slots,
        }
    }

    pub fn dim(&self) -> usize {
        self.e_val.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.e_val.nrows()
    }

    /// Pins the padding embeddings back to zero (called after every
    /// optimizer step).
    pub fn zero_padding_rows(&mut self) {
        self.e_val.row_mut(PAD).fill(0.0);
        self.e_addr.row_mut(PAD).fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.e_val.iter().all(|x| x.is_finite())
            && self.e_addr.iter().all(|x| x.is_finite())
            && self.w_out.iter().all(|x| x.is_finite())
            && self.b_out.is_finite()
    }

    /// Writes a versioned JSON checkpoint. Serialization is
    /// shortest-round-trip, so saving the same parameters twice yields
    /// byte-identical files and loading restores them exactly.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            dim: self.dim(),
            vocab_size: self.vocab_size(),
            mem_slots: self.mem_slots,
            hops: self.hops,
            e_val: to_rows(&self.e_val),
            e_addr: to_rows(&self.e_addr),
            w_out: self.w_out.to_vec(),
            b_out: self.b_out,
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &file).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file: CheckpointFile =
            serde_json::from_reader(BufReader::new(File::open(path)?))
                .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::BadCheckpoint(format!(
                "unsupported checkpoint version {}",
                file.format_version
            )));
        }
        let e_val = from_rows(file.e_val, file.vocab_size, file.dim)?;
        let e_addr = from_rows(file.e_addr, file.vocab_size, file.dim)?;
        if file.w_out.len() != file.dim {
            return Err(ModelError::BadCheckpoint(
                "output weights disagree with dim".to_string(),
            ));
        }
        Ok(ModelParams {
            e_val,
            e_addr,
            w_out: Array1::from_vec(file.w_out),
            b_out: file.b_out,
            hops: file.hops,
            mem_slots: file.mem_slots,
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    dim: usize,
    vocab_size: usize,
    mem_slots: usize,
    hops: usize,
    e_val: Vec<Vec<f64>>,
    e_addr: Vec<Vec<f64>>,
    w_out: Vec<f64>,
    b_out: f64,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, nrows: usize, ncols: usize) -> Result<Array2<f64>, ModelError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::BadCheckpoint(
            "embedding table shape disagrees with header".to_string(),
        ));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| ModelError::BadCheckpoint(e.to_string()))
}

/// Forward-pass switches. `mask_padding` drops empty memory slots from the
/// attention softmax; the plain model leaves them in (they carry zero
/// logits) and that is the default. `linear_attention` replaces the
/// softmax with the raw logits; it exists for the linear-start training
/// phase and is never the evaluated model.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub mask_padding: bool,
    pub linear_attention: bool,
}

/// Everything observable about one forward pass.
#[derive(Debug, Clone)]
pub struct HopTrace {
    /// Attention distribution over memory slots at each hop.
    pub attentions: Vec<Array1<f64>>,
    /// Response vector read out of the value block at each hop.
    pub responses: Vec<Array1<f64>>,
    /// Query embeddings u^0 ... u^K (one more than the hop count).
    pub queries: Vec<Array1<f64>>,
    /// Logistic output in (0,1); below 0.5 predicts unsafe.
    pub score: f64,
}

impl HopTrace {
    pub fn prediction(&self) -> Label {
        if self.score >= 0.5 {
            Label::Safe
        } else {
            Label::Unsafe
        }
    }

    /// Distance of the score from the decision boundary, rescaled to [0,1].
    pub fn confidence(&self) -> f64 {
        (self.score - 0.5).abs() * 2.0
    }
}

/// Numerically stabilized softmax (shift by the maximum logit).
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| (z - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|e| e / sum);
    out
}

/// Attention over the memory address block: softmax of the inner products
/// between the query embedding and each slot.
pub fn attention(u: &Array1<f64>, m_addr: &Array2<f64>) -> Array1<f64> {
    softmax(&m_addr.dot(u))
}

/// Masked variant: only the first `active` slots participate; the rest get
/// exactly zero attention. With `active == 0` the whole vector is zero.
pub fn attention_masked(u: &Array1<f64>, m_addr: &Array2<f64>, active: usize) -> Array1<f64> {
    let n = m_addr.nrows();
    let mut out = Array1::zeros(n);
    if active == 0 {
        return out;
    }
    let logits = m_addr.slice(ndarray::s![..active, ..]).dot(u);
    let p = softmax(&logits);
    out.slice_mut(ndarray::s![..active]).assign(&p);
    out
}

/// Attention-weighted sum of value-block rows.
pub fn readout(p: &Array1<f64>, m_val: &Array2<f64>) -> Array1<f64> {
    m_val.t().dot(p)
}

/// The query update is plain addition of the response.
pub fn hop_update(u: &Array1<f64>, o: &Array1<f64>) -> Array1<f64> {
    u + o
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate state of a forward pass, kept around so the backward pass
/// can reuse it.
pub(crate) struct ForwardPass {
    pub m_val: Array2<f64>,
    pub m_addr: Array2<f64>,
    pub queries: Vec<Array1<f64>>,
    pub attentions: Vec<Array1<f64>>,
    pub responses: Vec<Array1<f64>>,
    pub score: f64,
}

pub(crate) fn forward_pass(
    sample: &EncodedSample,
    params: &ModelParams,
    opts: ForwardOptions,
) -> Result<ForwardPass, ModelError> {
    check_compat(sample, params)?;
    let (m_val, m_addr, u0) = encoding::encode_sample(sample, &params.e_val, &params.e_addr);

    let mut queries = Vec::with_capacity(params.hops + 1);
    let mut attentions = Vec::with_capacity(params.hops);
    let mut responses = Vec::with_capacity(params.hops);
    queries.push(u0);
    for _ in 0..params.hops {
        let u = queries.last().unwrap();
        let p = match (opts.linear_attention, opts.mask_padding) {
            (false, false) => attention(u, &m_addr),
            (false, true) => attention_masked(u, &m_addr, sample.n_lines),
            (true, false) => m_addr.dot(u),
            (true, true) => {
                let mut z = Array1::zeros(params.mem_slots);
                let logits = m_addr.slice(ndarray::s![..sample.n_lines, ..]).dot(u);
                z.slice_mut(ndarray::s![..sample.n_lines]).assign(&logits);
                z
            }
        };
        let o = readout(&p, &m_val);
        queries.push(hop_update(u, &o));
        attentions.push(p);
        responses.push(o);
    }
    let u_final = queries.last().unwrap();
    let score = sigmoid(params.w_out.dot(u_final) + params.b_out);
    Ok(ForwardPass {
        m_val,
        m_addr,
        queries,
        attentions,
        responses,
        score,
    })
}

/// Runs the full multi-hop forward pass and returns the trace.
pub fn forward(sample: &EncodedSample, params: &ModelParams) -> Result<HopTrace, ModelError> {
    forward_with(sample, params, ForwardOptions::default())
}

pub fn forward_with(
    sample: &EncodedSample,
    params: &ModelParams,
    opts: ForwardOptions,
) -> Result<HopTrace, ModelError> {
    let pass = forward_pass(sample, params, opts)?;
    Ok(HopTrace {
        attentions: pass.attentions,
        responses: pass.responses,
        queries: pass.queries,
        score: pass.score,
    })
}

fn check_compat(sample: &EncodedSample, params: &ModelParams) -> Result<(), ModelError> {
    if sample.story_ids.nrows() != params.mem_slots {
        return Err(ModelError::DimensionMismatch(format!(
            "sample has {} memory slots, model expects {}",
            sample.story_ids.nrows(),
            params.mem_slots
        )));
    }
    if params.e_val.dim() != params.e_addr.dim() || params.w_out.len() != params.dim() {
        return Err(ModelError::DimensionMismatch(
            "embedding tables and output head disagree".to_string(),
        ));
    }
    let v = params.vocab_size();
    let max_id = sample
        .story_ids
        .iter()
        .chain(sample.query_ids.iter())
        .copied()
        .max()
        .unwrap_or(0);
    if max_id >= v {
        return Err(ModelError::DimensionMismatch(format!(
            "token id {max_id} outside vocabulary of size {v}"
        )));
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenConfig};
    use crate::encoding::Encoder;
    use ndarray::arr1;

    fn toy_sample(vocab: usize, slots: usize, words: usize, seed: u64) -> EncodedSample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_lines = rng.gen_range(1..=slots);
        let mut story_ids = Array2::from_elem((slots, words), PAD);
        let mut story_lens = vec![0usize; slots];
        for i in 0..n_lines {
            let len = rng.gen_range(1..=words);
            story_lens[i] = len;
            for j in 0..len {
                story_ids[[i, j]] = rng.gen_range(2..vocab);
            }
        }
        let query_len = rng.gen_range(1..=words);
        let mut query_ids = vec![PAD; words];
        for slot in query_ids.iter_mut().take(query_len) {
            *slot = rng.gen_range(2..vocab);
        }
        EncodedSample {
            story_ids,
            story_lens,
            n_lines,
            query_ids,
            query_len,
            label: Label::Safe,
        }
    }

    #[test]
    fn zero_address_block_gives_uniform_attention() {
        let n = 6;
        let p = attention(&arr1(&[1.0, -2.0, 0.5]), &Array2::zeros((n, 3)));
        for &pi in p.iter() {
            assert!((pi - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_concentrates_on_aligned_row() {
        let mut m = Array2::zeros((4, 2));
        m.row_mut(2).assign(&arr1(&[10.0, 0.0]));
        let p = attention(&arr1(&[5.0, 0.0]), &m);
        assert!(p[2] > 0.99);
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = arr1(&[1.0, 2.0, -3.0, 0.0]);
        let shifted = z.mapv(|x| x + 2.0);
        assert_eq!(softmax(&z), softmax(&shifted));
    }

    #[test]
    fn readout_special_cases() {
        let mut m = Array2::zeros((3, 2));
        m.row_mut(0).assign(&arr1(&[1.0, 2.0]));
        m.row_mut(1).assign(&arr1(&[3.0, 4.0]));
        m.row_mut(2).assign(&arr1(&[5.0, 6.0]));

        let one_hot = arr1(&[0.0, 1.0, 0.0]);
        assert_eq!(readout(&one_hot, &m), arr1(&[3.0, 4.0]));

        let uniform = arr1(&[1.0 / 3.0; 3]);
        let o = readout(&uniform, &m);
        assert!((o[0] - 3.0).abs() < 1e-12 && (o[1] - 4.0).abs() < 1e-12);

        let zero_vals = Array2::<f64>::zeros((3, 2));
        assert_eq!(readout(&one_hot, &zero_vals), Array1::<f64>::zeros(2));
    }

    #[test]
    fn hop_update_is_plain_addition() {
        let u = arr1(&[1.0, -1.0]);
        let o = arr1(&[0.5, 0.25]);
        assert_eq!(hop_update(&u, &Array1::zeros(2)), u);
        assert_eq!(hop_update(&Array1::zeros(2), &o), o);
        assert_eq!(hop_update(&u, &o), arr1(&[1.5, -0.75]));
    }

    #[test]
    fn zero_params_score_half_for_any_input() {
        let sample = toy_sample(12, 5, 4, 1);
        let params = ModelParams::zeros(12, 6, 5, 3);
        let trace = forward(&sample, &params).unwrap();
        assert_eq!(trace.score, 0.5);
    }

    #[test]
    fn forward_is_deterministic_and_updates_are_exactly_additive() {
        let sample = toy_sample(15, 6, 5, 2);
        let params = ModelParams::init(15, 8, 6, 3, 7);
        let a = forward(&sample, &params).unwrap();
        let b = forward(&sample, &params).unwrap();
        assert_eq!(a.score, b.score);
        for (pa, pb) in a.attentions.iter().zip(&b.attentions) {
            assert_eq!(pa, pb);
        }
        // Each hop stores exactly u^{k+1} = u^k + o^k, so the final query
        // telescopes to u^0 plus the responses.
        for k in 0..params.hops {
            let expect = hop_update(&a.queries[k], &a.responses[k]);
            assert_eq!(a.queries[k + 1], expect);
        }
        assert!(0.0 < a.score && a.score < 1.0);
        for p in &a.attentions {
            assert!((p.sum() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn memory_is_a_set_of_lines() {
        // The model has no temporal encoding across slots: reordering whole
        // story lines permutes both memory blocks identically, which leaves
        // the hop arithmetic unchanged up to float rounding.
        let cfg = GenConfig {
            num_samples: 5,
            seed: 44,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let encoder = Encoder::fit(&corpus, 30).unwrap();
        let params = ModelParams::init(encoder.vocab.len(), 16, 30, 3, 3);

        let mut swapped = corpus[0].clone();
        let last_line = swapped.story.len() - 1;
        swapped.story.swap(0, last_line);
        let a = forward(&encoder.encode(&corpus[0]).unwrap(), &params).unwrap();
        let b = forward(&encoder.encode(&swapped).unwrap(), &params).unwrap();
        assert!((a.score - b.score).abs() < 1e-12);

        // Permuting all-padding slots in place changes nothing at all.
        let enc = encoder.encode(&corpus[0]).unwrap();
        let mut enc_permuted = enc.clone();
        let last = enc.story_ids.nrows() - 1;
        let (r1, r2) = (enc.n_lines, last);
        for j in 0..enc.story_ids.ncols() {
            enc_permuted.story_ids.swap([r1, j], [r2, j]);
        }
        enc_permuted.story_lens.swap(r1, r2);
        let c = forward(&enc_permuted, &params).unwrap();
        assert_eq!(a.score, c.score);
    }

    #[test]
    fn masked_attention_ignores_padding_slots() {
        let sample = toy_sample(15, 6, 5, 5);
        let params = ModelParams::init(15, 8, 6, 2, 9);
        let trace = forward_with(
            &sample,
            &params,
            ForwardOptions { mask_padding: true, ..ForwardOptions::default() },
        )
        .unwrap();
        for p in &trace.attentions {
            for i in sample.n_lines..6 {
                assert_eq!(p[i], 0.0);
            }
            assert!((p.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_are_contract_errors() {
        let sample = toy_sample(12, 5, 4, 3);
        let params = ModelParams::zeros(12, 6, 7, 3);
        assert!(matches!(
            forward(&sample, &params),
            Err(ModelError::DimensionMismatch(_))
        ));
        let small_vocab = ModelParams::zeros(3, 6, 5, 3);
        assert!(matches!(
            forward(&sample, &small_vocab),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_deterministic() {
        let params = ModelParams::init(20, 6, 5, 3, 123);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        params.save(&p1).unwrap();
        let loaded = ModelParams::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let sample = toy_sample(20, 5, 4, 8);
        let a = forward(&sample, &params).unwrap().score;
        let b = forward(&sample, &loaded).unwrap().score;
        assert_eq!(a, b);
    }
}

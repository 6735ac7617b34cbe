//! Loss, exact gradients, Adam, and the training protocol.
//!
//! The backward pass differentiates the whole pipeline by hand: logistic
//! head, every hop's additive update, softmax attention, readout, and the
//! position-weighted line encodings down into both embedding tables.
//! Position weights are constants. Correctness is checked against central
//! finite differences (see [`gradcheck`]).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::encoding::{position_weight, EncodedSample};
use crate::model::{
    forward_pass, forward_with, ForwardOptions, ModelError, ModelParams,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Scores this close to 0 or 1 are clamped before taking logs.
pub const LOSS_EPS: f64 = 1e-12;

/// Fixed work-chunk size for parallel gradient accumulation. Partial sums
/// are combined in chunk order, so results do not depend on thread count.
const PAR_CHUNK: usize = 8;

/// Separate ChaCha stream for the per-epoch shuffle, so shuffling never
/// aliases the parameter-init stream of the same seed.
const SHUFFLE_STREAM: u64 = 0x73687566;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// How many best-by-training-error epoch snapshots to keep.
    pub snapshot_top_k: usize,
    /// Optional global-norm gradient clipping.
    pub grad_clip: Option<f64>,
    /// Train with padding slots masked out of the attention softmax.
    pub mask_padding: bool,
    /// Warm-up epochs with the attention softmax removed (linear start).
    /// The nonlinearity is re-inserted afterwards and candidate snapshots
    /// are only taken from the softmax phase.
    pub linear_start_epochs: usize,
    /// Decoupled weight decay applied after each Adam step (bias exempt).
    pub weight_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            snapshot_top_k: 10,
            grad_clip: None,
            mask_padding: false,
            linear_start_epochs: 0,
            weight_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.snapshot_top_k == 0 {
            return Err(TrainError::InvalidConfig(
                "snapshot_top_k must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Options matching how the finished model is meant to be evaluated
    /// (the linear-start flag is a transient training phase, never eval).
    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            mask_padding: self.mask_padding,
            ..ForwardOptions::default()
        }
    }
}

/// Mirrors [`ModelParams`]' learnable tensors.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub e_val: Array2<f64>,
    pub e_addr: Array2<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            e_val: Array2::zeros(params.e_val.dim()),
            e_addr: Array2::zeros(params.e_addr.dim()),
            w_out: Array1::zeros(params.w_out.len()),
            b_out: 0.0,
        }
    }

    pub fn zero(&mut self) {
        self.e_val.fill(0.0);
        self.e_addr.fill(0.0);
        self.w_out.fill(0.0);
        self.b_out = 0.0;
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.e_val += &other.e_val;
        self.e_addr += &other.e_addr;
        self.w_out += &other.w_out;
        self.b_out += other.b_out;
    }

    pub fn scale(&mut self, c: f64) {
        self.e_val *= c;
        self.e_addr *= c;
        self.w_out *= c;
        self.b_out *= c;
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self.e_val.iter().map(|x| x * x).sum::<f64>()
            + self.e_addr.iter().map(|x| x * x).sum::<f64>()
            + self.w_out.iter().map(|x| x * x).sum::<f64>()
            + self.b_out * self.b_out;
        sq.sqrt()
    }
}

/// Binary cross-entropy of a score in (0,1) against a 0/1 label.
pub fn loss(score: f64, label: Label) -> f64 {
    let s = score.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    match label {
        Label::Safe => -s.ln(),
        Label::Unsafe => -(1.0 - s).ln(),
    }
}

/// Loss and exact parameter gradients for one sample.
pub fn backward(
    sample: &EncodedSample,
    params: &ModelParams,
    label: Label,
) -> Result<(f64, Gradients), TrainError> {
    let mut grads = Gradients::zeros_like(params);
    let l = backward_into(sample, params, label, ForwardOptions::default(), &mut grads)?;
    Ok((l, grads))
}

/// Accumulating variant used by the batch loop. Returns the sample loss.
pub fn backward_into(
    sample: &EncodedSample,
    params: &ModelParams,
    label: Label,
    opts: ForwardOptions,
    grads: &mut Gradients,
) -> Result<f64, TrainError> {
    let pass = forward_pass(sample, params, opts)?;
    let s = pass.score;
    if !s.is_finite() {
        return Err(TrainError::NonFinite(format!(
            "forward score is {s} (label {label})"
        )));
    }
    let value = loss(s, label);
    let hops = params.hops;
    let n = params.mem_slots;

    // Logistic head fused with the cross-entropy: dL/dlogit = s - y.
    let dlogit = s - label.as_f64();
    grads.w_out.scaled_add(dlogit, &pass.queries[hops]);
    grads.b_out += dlogit;

    // dL/du^K, then walk the hops backwards.
    let mut d_u: Array1<f64> = params.w_out.mapv(|w| w * dlogit);
    let dim = params.dim();
    let mut d_mval: Array2<f64> = Array2::zeros((n, dim));
    let mut d_maddr: Array2<f64> = Array2::zeros((n, dim));

    for k in (0..hops).rev() {
        let p = &pass.attentions[k];
        let u_k = &pass.queries[k];

        // u^{k+1} = u^k + o^k: the response sees the same upstream
        // gradient as the query.
        let d_o = d_u.clone();

        // o = M_val^T p.
        let d_p = pass.m_val.dot(&d_o);
        for i in 0..n {
            d_mval.row_mut(i).scaled_add(p[i], &d_o);
        }

        // Softmax Jacobian: d_z = p * (d_p - <p, d_p>). Masked slots have
        // p exactly zero, so they drop out on their own. In the
        // linear-start phase p is z itself and the Jacobian is identity.
        let d_z = if opts.linear_attention {
            if opts.mask_padding {
                let mut d_z = d_p.clone();
                d_z.slice_mut(ndarray::s![sample.n_lines..]).fill(0.0);
                d_z
            } else {
                d_p.clone()
            }
        } else {
            let inner = p.dot(&d_p);
            ndarray::Zip::from(p)
                .and(&d_p)
                .map_collect(|&pi, &dpi| pi * (dpi - inner))
        };

        // z = M_addr u^k.
        for i in 0..n {
            d_maddr.row_mut(i).scaled_add(d_z[i], u_k);
        }
        d_u += &pass.m_addr.t().dot(&d_z);
    }

    // Through the position-weighted line encodings into the tables. Slots
    // past the story hold no tokens, so their rows contribute nothing.
    for i in 0..sample.n_lines {
        let ids = sample.line(i);
        let ids = ids.as_slice().expect("row-major story ids");
        accumulate_line(ids, &d_mval.row(i), &mut grads.e_val);
        accumulate_line(ids, &d_maddr.row(i), &mut grads.e_addr);
    }
    // After the loop d_u is dL/du^0, which flows into the query encoding.
    accumulate_line(sample.query(), &d_u.view(), &mut grads.e_addr);

    Ok(value)
}

fn accumulate_line(ids: &[usize], upstream: &ArrayView1<f64>, table_grad: &mut Array2<f64>) {
    let t = ids.len();
    let dim = table_grad.ncols();
    for (j, &id) in ids.iter().enumerate() {
        let mut row = table_grad.row_mut(id);
        for k in 0..dim {
            row[k] += position_weight(j + 1, t, k + 1, dim) * upstream[k];
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Padding embeddings are re-zeroed
/// afterwards so they stay pinned whatever the gradients were.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = cfg.learning_rate;

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    };

    ndarray::Zip::from(&mut params.e_val)
        .and(&grads.e_val)
        .and(&mut state.m.e_val)
        .and(&mut state.v.e_val)
        .for_each(|p, &g, m, v| update(p, g, m, v));
    ndarray::Zip::from(&mut params.e_addr)
        .and(&grads.e_addr)
        .and(&mut state.m.e_addr)
        .and(&mut state.v.e_addr)
        .for_each(|p, &g, m, v| update(p, g, m, v));
    ndarray::Zip::from(&mut params.w_out)
        .and(&grads.w_out)
        .and(&mut state.m.w_out)
        .and(&mut state.v.w_out)
        .for_each(|p, &g, m, v| update(p, g, m, v));
    update(
        &mut params.b_out,
        grads.b_out,
        &mut state.m.b_out,
        &mut state.v.b_out,
    );

    if let Some(wd) = cfg.weight_decay {
        let keep = 1.0 - lr * wd;
        params.e_val *= keep;
        params.e_addr *= keep;
        params.w_out *= keep;
    }
    params.zero_padding_rows();
}

/// One retained epoch snapshot, ranked by training error.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub params: ModelParams,
    pub epoch: usize,
    /// Misclassification rate on the training set.
    pub train_error: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub wall_time_s: f64,
    /// True for warm-up epochs trained without the attention softmax.
    #[serde(default)]
    pub linear_start: bool,
}

#[derive(Debug)]
pub struct TrainOutput {
    /// Best snapshots, lowest training error first.
    pub snapshots: Vec<Snapshot>,
    pub history: Vec<EpochRecord>,
    /// Epoch at which the loss went non-finite, if it ever did.
    pub diverged: Option<usize>,
}

impl TrainOutput {
    pub fn best(&self) -> Option<&Snapshot> {
        self.snapshots.first()
    }
}

/// Trains `params` on `data` and retains the `snapshot_top_k` epoch
/// snapshots with the smallest training error (ties broken by loss, then
/// by epoch). Fully deterministic for a fixed seed. If the loss goes
/// non-finite, training stops and whatever snapshots exist are returned
/// with `diverged` set.
pub fn train(
    data: &[EncodedSample],
    params: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut history = Vec::new();
    let mut diverged = None;
    let total_epochs = cfg.linear_start_epochs + cfg.epochs;

    'epochs: for epoch in 1..=total_epochs {
        let linear_phase = epoch <= cfg.linear_start_epochs;
        let opts = ForwardOptions {
            mask_padding: cfg.mask_padding,
            linear_attention: linear_phase,
        };
        if epoch == cfg.linear_start_epochs + 1 && cfg.linear_start_epochs > 0 {
            // Fresh optimizer state for the softmax phase; the loss
            // surface changes shape when the nonlinearity comes back.
            adam = AdamState::new(&params);
        }
        let start = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (batch_loss, mut grads) = match batch_gradients(data, batch, &params, opts) {
                Ok(x) => x,
                Err(TrainError::NonFinite(_)) => {
                    diverged = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !batch_loss.is_finite() {
                diverged = Some(epoch);
                break 'epochs;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = cfg.grad_clip {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &grads, &mut adam, cfg);
        }

        let (train_loss, train_accuracy) = evaluate_dataset(data, &params, opts)?;
        if !train_loss.is_finite() || !params.is_finite() {
            diverged = Some(epoch);
            break;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
            linear_start: linear_phase,
        });
        if !linear_phase {
            snapshots.push(Snapshot {
                params: params.clone(),
                epoch,
                train_error: 1.0 - train_accuracy,
                train_loss,
                train_accuracy,
            });
            snapshots.sort_by(|a, b| {
                (a.train_error, a.train_loss, a.epoch)
                    .partial_cmp(&(b.train_error, b.train_loss, b.epoch))
                    .expect("finite snapshot metrics")
            });
            snapshots.truncate(cfg.snapshot_top_k);
        }
    }

    Ok(TrainOutput {
        snapshots,
        history,
        diverged,
    })
}

/// Mean loss over the batch plus the summed (not yet averaged) gradients.
fn batch_gradients(
    data: &[EncodedSample],
    batch: &[usize],
    params: &ModelParams,
    opts: ForwardOptions,
) -> Result<(f64, Gradients), TrainError> {
    let partials: Result<Vec<(f64, Gradients)>, TrainError> = batch
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(params);
            let mut loss_sum = 0.0;
            for &i in chunk {
                loss_sum += backward_into(&data[i], params, data[i].label, opts, &mut grads)?;
            }
            Ok((loss_sum, grads))
        })
        .collect();
    let partials = partials?;
    let mut total = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    for (l, g) in &partials {
        loss_sum += l;
        total.add_assign(g);
    }
    Ok((loss_sum / batch.len() as f64, total))
}

/// Mean loss and accuracy of `params` over a dataset.
pub fn evaluate_dataset(
    data: &[EncodedSample],
    params: &ModelParams,
    opts: ForwardOptions,
) -> Result<(f64, f64), TrainError> {
    let per: Result<Vec<(f64, bool)>, TrainError> = data
        .par_iter()
        .map(|s| {
            let trace = forward_with(s, params, opts)?;
            Ok((loss(trace.score, s.label), trace.prediction() == s.label))
        })
        .collect();
    let per = per?;
    let n = per.len() as f64;
    let loss_sum: f64 = per.iter().map(|(l, _)| l).sum();
    let correct = per.iter().filter(|(_, ok)| *ok).count();
    Ok((loss_sum / n, correct as f64 / n))
}

/// One JSON record per epoch.
pub fn write_log(path: &Path, history: &[EpochRecord]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in history {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value during training: {0}")]
    NonFinite(String),
}

pub mod gradcheck {
    //! Central-difference gradient oracle.
    //!
    //! Every parameter entry is perturbed by ±step and the loss is
    //! re-evaluated through the ordinary forward pass, so this path shares
    //! nothing with [`backward`](super::backward). Errors are normalized
    //! by `max(1, |a|, |n|)`, which behaves like a relative error for
    //! gradients of ordinary size and like an absolute error near zero.

    use super::*;

    /// Central finite differences of the loss with respect to every
    /// parameter.
    pub fn numeric_gradients(
        sample: &EncodedSample,
        params: &ModelParams,
        label: Label,
        opts: ForwardOptions,
        step: f64,
    ) -> Result<Gradients, TrainError> {
        let mut work = params.clone();
        let mut out = Gradients::zeros_like(params);

        let (v, d) = params.e_val.dim();
        for r in 0..v {
            for c in 0..d {
                out.e_val[[r, c]] = {
                    let orig = work.e_val[[r, c]];
                    let g = central(&mut work, sample, label, opts, step, orig, |p, x| {
                        p.e_val[[r, c]] = x
                    })?;
                    work.e_val[[r, c]] = orig;
                    g
                };
                out.e_addr[[r, c]] = {
                    let orig = work.e_addr[[r, c]];
                    let g = central(&mut work, sample, label, opts, step, orig, |p, x| {
                        p.e_addr[[r, c]] = x
                    })?;
                    work.e_addr[[r, c]] = orig;
                    g
                };
            }
        }
        for c in 0..d {
            let orig = work.w_out[c];
            out.w_out[c] =
                central(&mut work, sample, label, opts, step, orig, |p, x| p.w_out[c] = x)?;
            work.w_out[c] = orig;
        }
        let orig = work.b_out;
        out.b_out = central(&mut work, sample, label, opts, step, orig, |p, x| p.b_out = x)?;
        work.b_out = orig;

        Ok(out)
    }

    fn central(
        work: &mut ModelParams,
        sample: &EncodedSample,
        label: Label,
        opts: ForwardOptions,
        step: f64,
        orig: f64,
        mut set: impl FnMut(&mut ModelParams, f64),
    ) -> Result<f64, TrainError> {
        set(work, orig + step);
        let plus = loss_at(sample, work, label, opts)?;
        set(work, orig - step);
        let minus = loss_at(sample, work, label, opts)?;
        Ok((plus - minus) / (2.0 * step))
    }

    fn loss_at(
        sample: &EncodedSample,
        params: &ModelParams,
        label: Label,
        opts: ForwardOptions,
    ) -> Result<f64, TrainError> {
        let trace = forward_with(sample, params, opts)?;
        Ok(loss(trace.score, label))
    }

    /// Largest normalized difference between two gradient sets.
    pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
        let rel = |x: f64, y: f64| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs());
        let mut worst: f64 = 0.0;
        for (x, y) in a.e_val.iter().zip(b.e_val.iter()) {
            worst = worst.max(rel(*x, *y));
        }
        for (x, y) in a.e_addr.iter().zip(b.e_addr.iter()) {
            worst = worst.max(rel(*x, *y));
        }
        for (x, y) in a.w_out.iter().zip(b.w_out.iter()) {
            worst = worst.max(rel(*x, *y));
        }
        worst.max(rel(a.b_out, b.b_out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::PAD;
    use ndarray::Array2;

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
        let label = if rng.gen_bool(0.5) {
            Label::Safe
        } else {
            Label::Unsafe
        };
        EncodedSample {
            story_ids,
            story_lens,
            n_lines,
            query_ids,
            query_len,
            label,
        }
    }

    #[test]
    fn loss_reference_values() {
        assert!((loss(0.5, Label::Safe) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss(0.5, Label::Unsafe) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(1.0 - 1e-15, Label::Safe) < 1e-9);
        assert!((loss(0.9, Label::Unsafe) - 2.302585092994046).abs() < 1e-9);
        // Clamped at the boundary rather than infinite.
        assert!(loss(1.0, Label::Unsafe).is_finite());
        assert!(loss(0.0, Label::Safe).is_finite());
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let sample = toy_sample(12, 4, 5, 17);
        let params = ModelParams::init(12, 5, 4, 2, 99);
        let (_, analytic) = backward(&sample, &params, sample.label).unwrap();
        let numeric = gradcheck::numeric_gradients(
            &sample,
            &params,
            sample.label,
            ForwardOptions::default(),
            1e-5,
        )
        .unwrap();
        let err = gradcheck::max_relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn gradients_match_under_masking_too() {
        let sample = toy_sample(10, 5, 4, 23);
        let params = ModelParams::init(10, 4, 5, 3, 7);
        let opts = ForwardOptions { mask_padding: true, ..ForwardOptions::default() };
        let mut analytic = Gradients::zeros_like(&params);
        backward_into(&sample, &params, sample.label, opts, &mut analytic).unwrap();
        let numeric =
            gradcheck::numeric_gradients(&sample, &params, sample.label, opts, 1e-5).unwrap();
        let err = gradcheck::max_relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn empty_story_leaves_value_table_untouched() {
        let mut sample = toy_sample(12, 4, 5, 3);
        sample.story_ids.fill(PAD);
        sample.story_lens = vec![0; 4];
        sample.n_lines = 0;
        let params = ModelParams::init(12, 5, 4, 2, 1);
        let (_, grads) = backward(&sample, &params, Label::Safe).unwrap();
        assert!(grads.e_val.iter().all(|&g| g == 0.0));
        assert!(grads.e_addr.iter().any(|&g| g != 0.0), "query path flows");
    }

    #[test]
    fn padding_row_never_receives_gradient() {
        for seed in 0..5 {
            let sample = toy_sample(14, 5, 6, seed);
            let params = ModelParams::init(14, 6, 5, 3, seed + 100);
            let (_, grads) = backward(&sample, &params, sample.label).unwrap();
            assert!(grads.e_val.row(PAD).iter().all(|&g| g == 0.0));
            assert!(grads.e_addr.row(PAD).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut params = ModelParams::init(8, 4, 3, 2, 5);
        let before = params.clone();
        let grads = Gradients::zeros_like(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default());
        assert_eq!(state.step, 1);
        assert_eq!(params.e_val, before.e_val);
        assert_eq!(params.e_addr, before.e_addr);
        assert_eq!(params.w_out, before.w_out);
        assert_eq!(params.b_out, before.b_out);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut params = ModelParams::zeros(8, 4, 3, 2);
        let mut grads = Gradients::zeros_like(&params);
        grads.b_out = 0.5;
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg);
        assert!((params.b_out + cfg.learning_rate).abs() < 1e-6);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_learning_rate() {
        let mut params = ModelParams::zeros(8, 4, 3, 2);
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        let mut grads = Gradients::zeros_like(&params);
        grads.b_out = 0.37;
        let mut prev = params.b_out;
        for _ in 0..200 {
            adam_step(&mut params, &grads, &mut state, &cfg);
            let delta = prev - params.b_out;
            prev = params.b_out;
            assert!(delta > 0.0);
        }
        let final_delta = {
            adam_step(&mut params, &grads, &mut state, &cfg);
            prev - params.b_out
        };
        assert!(
            (final_delta - cfg.learning_rate).abs() < 0.05 * cfg.learning_rate,
            "step size {final_delta}"
        );
    }

    #[test]
    fn padding_rows_stay_zero_after_training_steps() {
        let data: Vec<EncodedSample> = (0..16).map(|i| toy_sample(12, 4, 5, i)).collect();
        let params = ModelParams::init(12, 5, 4, 2, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&data, params, &cfg).unwrap();
        let best = out.best().unwrap();
        assert!(best.params.e_val.row(PAD).iter().all(|&x| x == 0.0));
        assert!(best.params.e_addr.row(PAD).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let data: Vec<EncodedSample> = (0..40).map(|i| toy_sample(12, 4, 5, i)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&data, ModelParams::init(12, 5, 4, 2, 1), &cfg).unwrap();
        let b = train(&data, ModelParams::init(12, 5, 4, 2, 1), &cfg).unwrap();
        let curve_a: Vec<f64> = a.history.iter().map(|r| r.train_loss).collect();
        let curve_b: Vec<f64> = b.history.iter().map(|r| r.train_loss).collect();
        assert_eq!(curve_a, curve_b);
    }

    #[test]
    fn non_finite_parameters_abort_with_divergence_flag() {
        let data: Vec<EncodedSample> = (0..8).map(|i| toy_sample(12, 4, 5, i)).collect();
        let mut params = ModelParams::init(12, 5, 4, 2, 1);
        params.b_out = f64::NAN;
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&data, params, &cfg).unwrap();
        assert_eq!(out.diverged, Some(1));
        assert!(out.snapshots.is_empty());
    }

    #[test]
    fn snapshot_ranking_keeps_the_lowest_error() {
        let data: Vec<EncodedSample> = (0..24).map(|i| toy_sample(12, 4, 5, i)).collect();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 8,
            snapshot_top_k: 3,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&data, ModelParams::init(12, 5, 4, 2, 2), &cfg).unwrap();
        assert_eq!(out.snapshots.len(), 3);
        for pair in out.snapshots.windows(2) {
            assert!(
                (pair[0].train_error, pair[0].train_loss)
                    <= (pair[1].train_error, pair[1].train_loss)
            );
        }
        let best_err = out.snapshots[0].train_error;
        for record in &out.history {
            assert!(1.0 - record.train_accuracy >= best_err - 1e-12);
        }
    }
}

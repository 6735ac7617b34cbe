//! Hop-wise attention traces and embedding geometry.
//!
//! `trace` aligns each hop's attention distribution with the source lines
//! it attends to, for inspecting how the model walks from the query to the
//! allocation lines it needs. The atlas/geometry functions expose what the
//! embedding tables learned about integer tokens: pairwise cosine and L2
//! structure and a raw export suitable for external projection tools.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::corpus::{Label, ProgramSample};
use crate::encoding::{Encoder, Vocabulary, PAD};
use crate::model::{forward_with, ForwardOptions, ModelError, ModelParams};

/// Which embedding table to look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Val,
    Addr,
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Table::Val => write!(f, "value"),
            Table::Addr => write!(f, "address"),
        }
    }
}

#[derive(Debug, Error)]
pub enum IntrospectError {
    #[error("vocabulary has {vocab} tokens but the model embeds {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("need at least two integer tokens, found {0}")]
    TooFewNumbers(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encode(#[from] crate::encoding::EncodeError),
    #[error("introspection I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

/// One traced prediction: attention per hop aligned 1:1 with memory slots.
#[derive(Debug, Clone)]
pub struct TraceReport {
    /// Source text per memory slot; `None` for padding slots.
    pub lines: Vec<Option<String>>,
    pub query: String,
    /// `hops x mem_slots` attention weights.
    pub attentions: Vec<Vec<f64>>,
    pub score: f64,
    pub prediction: Label,
    /// Distance of the score from the 0.5 decision boundary, rescaled to
    /// [0,1].
    pub confidence: f64,
}

pub fn trace(
    sample: &ProgramSample,
    encoder: &Encoder,
    params: &ModelParams,
) -> Result<TraceReport, IntrospectError> {
    trace_with(sample, encoder, params, ForwardOptions::default())
}

pub fn trace_with(
    sample: &ProgramSample,
    encoder: &Encoder,
    params: &ModelParams,
    opts: ForwardOptions,
) -> Result<TraceReport, IntrospectError> {
    let encoded = encoder.encode(sample)?;
    let hop_trace = forward_with(&encoded, params, opts)?;
    let mut lines: Vec<Option<String>> = sample.story.iter().cloned().map(Some).collect();
    lines.resize(params.mem_slots, None);
    Ok(TraceReport {
        lines,
        query: sample.query.clone(),
        attentions: hop_trace.attentions.iter().map(|p| p.to_vec()).collect(),
        score: hop_trace.score,
        prediction: hop_trace.prediction(),
        confidence: hop_trace.confidence(),
    })
}

impl TraceReport {
    /// Memory slot with the largest weight at `hop` (0-based).
    pub fn argmax_slot(&self, hop: usize) -> usize {
        let p = &self.attentions[hop];
        (0..p.len())
            .max_by(|&a, &b| p[a].total_cmp(&p[b]))
            .unwrap_or(0)
    }

    /// Human-readable table: one row per real source line, attention per
    /// hop in columns, padding slots folded into a summary row.
    pub fn render(&self) -> String {
        let hops = self.attentions.len();
        let mut out = String::new();
        out.push_str("      ");
        for k in 0..hops {
            out.push_str(&format!("  hop {:<2}", k + 1));
        }
        out.push_str("  line\n");
        for (i, line) in self.lines.iter().enumerate() {
            let Some(text) = line else { continue };
            out.push_str(&format!("{:>4}  ", i + 1));
            for p in &self.attentions {
                let marker = if self.argmax_hop_is(i, p) { '*' } else { ' ' };
                out.push_str(&format!("{marker}{:6.3} ", p[i]));
            }
            out.push_str(&format!("  {text}\n"));
        }
        let pad_slots = self.lines.iter().filter(|l| l.is_none()).count();
        if pad_slots > 0 {
            out.push_str(&format!("{:>4}  ", "pad"));
            for p in &self.attentions {
                let mass: f64 = self
                    .lines
                    .iter()
                    .zip(p)
                    .filter(|(l, _)| l.is_none())
                    .map(|(_, w)| w)
                    .sum();
                out.push_str(&format!(" {mass:6.3} "));
            }
            out.push_str(&format!("  ({pad_slots} empty slots)\n"));
        }
        out.push_str(&format!("query  {}\n", self.query));
        out.push_str(&format!(
            "score  {:.4} -> {} (confidence {:.2})\n",
            self.score, self.prediction, self.confidence
        ));
        out
    }

    fn argmax_hop_is(&self, slot: usize, p: &[f64]) -> bool {
        p.iter().all(|&w| w <= p[slot])
    }
}

/// Every non-padding token's embeddings in both tables, with the integer
/// tokens indexed separately in ascending numeric order.
#[derive(Debug, Clone)]
pub struct EmbeddingAtlas {
    /// Tokens in vocabulary order, padding excluded (atlas row `i` is
    /// vocabulary id `i + 1`).
    pub tokens: Vec<String>,
    val: Array2<f64>,
    addr: Array2<f64>,
    /// `(atlas row, numeric value)` pairs sorted ascending by value.
    pub numeric: Vec<(usize, i64)>,
}

impl EmbeddingAtlas {
    pub fn new(params: &ModelParams, vocab: &Vocabulary) -> Result<Self, IntrospectError> {
        if vocab.len() != params.vocab_size() {
            return Err(IntrospectError::VocabMismatch {
                vocab: vocab.len(),
                model: params.vocab_size(),
            });
        }
        let rows = vocab.len() - 1;
        let dim = params.dim();
        let mut val = Array2::zeros((rows, dim));
        let mut addr = Array2::zeros((rows, dim));
        let mut tokens = Vec::with_capacity(rows);
        let mut numeric = Vec::new();
        for id in PAD + 1..vocab.len() {
            let row = id - 1;
            val.row_mut(row).assign(&params.e_val.row(id));
            addr.row_mut(row).assign(&params.e_addr.row(id));
            let token = vocab.token(id);
            if let Ok(value) = token.parse::<i64>() {
                numeric.push((row, value));
            }
            tokens.push(token.to_string());
        }
        numeric.sort_by_key(|&(_, v)| v);
        Ok(EmbeddingAtlas {
            tokens,
            val,
            addr,
            numeric,
        })
    }

    pub fn vectors(&self, table: Table) -> &Array2<f64> {
        match table {
            Table::Val => &self.val,
            Table::Addr => &self.addr,
        }
    }

    pub fn dim(&self) -> usize {
        self.val.ncols()
    }
}

/// Pairwise similarity structure over the integer tokens, ascending by
/// value (smallest number at row/column 0).
#[derive(Debug, Clone)]
pub struct NumberGeometry {
    pub table: Table,
    pub values: Vec<i64>,
    pub tokens: Vec<String>,
    pub cosine: Array2<f64>,
    pub l2: Array2<f64>,
}

pub fn number_geometry(
    atlas: &EmbeddingAtlas,
    table: Table,
) -> Result<NumberGeometry, IntrospectError> {
    let n = atlas.numeric.len();
    if n < 2 {
        return Err(IntrospectError::TooFewNumbers(n));
    }
    let vectors = atlas.vectors(table);
    let mut cosine = Array2::zeros((n, n));
    let mut l2 = Array2::zeros((n, n));
    for (i, &(row_i, _)) in atlas.numeric.iter().enumerate() {
        let a = vectors.row(row_i);
        let norm_a = a.dot(&a).sqrt();
        for (j, &(row_j, _)) in atlas.numeric.iter().enumerate() {
            let b = vectors.row(row_j);
            let norm_b = b.dot(&b).sqrt();
            // A zero vector has no direction; flag the entry instead of
            // dividing by zero.
            cosine[[i, j]] = if norm_a == 0.0 || norm_b == 0.0 {
                f64::NAN
            } else {
                a.dot(&b) / (norm_a * norm_b)
            };
            let diff = &a.to_owned() - &b;
            l2[[i, j]] = diff.dot(&diff).sqrt();
        }
    }
    Ok(NumberGeometry {
        table,
        values: atlas.numeric.iter().map(|&(_, v)| v).collect(),
        tokens: atlas
            .numeric
            .iter()
            .map(|&(row, _)| atlas.tokens[row].clone())
            .collect(),
        cosine,
        l2,
    })
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side has no variation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired observations");
    let rx = ranks(x);
    let ry = ranks(y);
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean) * (a - mean);
        var_y += (b - mean) * (b - mean);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return 0.0;
    }
    cov / (var_x.sqrt() * var_y.sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation between numeric distance `|a-b|` and embedding L2
/// distance over all pairs of integer tokens.
pub fn numeric_l2_spearman(atlas: &EmbeddingAtlas, table: Table) -> Result<f64, IntrospectError> {
    let geometry = number_geometry(atlas, table)?;
    let n = geometry.values.len();
    let mut num_dist = Vec::with_capacity(n * (n - 1) / 2);
    let mut emb_dist = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            num_dist.push((geometry.values[i] - geometry.values[j]).abs() as f64);
            emb_dist.push(geometry.l2[[i, j]]);
        }
    }
    Ok(spearman(&num_dist, &emb_dist))
}

/// Writes one CSV row per token: the token, its numeric value if it has
/// one, and the embedding components from `table`. With `numeric_only`,
/// rows cover exactly the integer tokens in ascending order; otherwise all
/// non-padding tokens in vocabulary order.
pub fn export_embeddings(
    atlas: &EmbeddingAtlas,
    path: &Path,
    table: Table,
    numeric_only: bool,
) -> Result<(), IntrospectError> {
    let vectors = atlas.vectors(table);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "token,value")?;
    for k in 0..atlas.dim() {
        write!(out, ",v{k}")?;
    }
    writeln!(out)?;

    let rows: Vec<(usize, Option<i64>)> = if numeric_only {
        atlas.numeric.iter().map(|&(r, v)| (r, Some(v))).collect()
    } else {
        let value_of = |row: usize| {
            atlas
                .numeric
                .iter()
                .find(|&&(r, _)| r == row)
                .map(|&(_, v)| v)
        };
        (0..atlas.tokens.len()).map(|r| (r, value_of(r))).collect()
    };
    for (row, value) in rows {
        write!(out, "{}", atlas.tokens[row])?;
        match value {
            Some(v) => write!(out, ",{v}")?,
            None => write!(out, ",")?,
        }
        for x in vectors.row(row) {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Plain numeric grid with a header row of token names, tab-separated.
pub fn write_matrix(path: &Path, tokens: &[String], matrix: &Array2<f64>) -> Result<(), IntrospectError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", tokens.join("\t"))?;
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", cells.join("\t"))?;
    }
    out.flush()?;
    Ok(())
}

/// Renders a matrix as a PNG heatmap, low values blue, high values red,
/// NaN gray. Purely a convenience view over the matrix files.
pub fn heatmap_png(matrix: &Array2<f64>, path: &Path, cell_px: u32) -> Result<(), IntrospectError> {
    let finite: Vec<f64> = matrix.iter().copied().filter(|x| x.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let (rows, cols) = matrix.dim();
    let mut img = image::RgbImage::new(cols as u32 * cell_px, rows as u32 * cell_px);
    for (r, row) in matrix.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let rgb = if v.is_finite() {
                let t = (v - lo) / span;
                if t < 0.5 {
                    // blue -> white
                    let s = t * 2.0;
                    [(255.0 * s) as u8, (255.0 * s) as u8, 255]
                } else {
                    // white -> red
                    let s = (t - 0.5) * 2.0;
                    [255, (255.0 * (1.0 - s)) as u8, (255.0 * (1.0 - s)) as u8]
                }
            } else {
                [128, 128, 128]
            };
            for dy in 0..cell_px {
                for dx in 0..cell_px {
                    img.put_pixel(
                        c as u32 * cell_px + dx,
                        r as u32 * cell_px + dy,
                        image::Rgb(rgb),
                    );
                }
            }
        }
    }
    img.save(path).map_err(std::io::Error::other)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenConfig};

    fn small_setup() -> (Vec<ProgramSample>, Encoder, ModelParams) {
        let cfg = GenConfig {
            num_samples: 60,
            seed: 3,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let encoder = Encoder::fit(&corpus, 30).unwrap();
        let params = ModelParams::init(encoder.vocab.len(), 16, 30, 3, 9);
        (corpus, encoder, params)
    }

    #[test]
    fn trace_aligns_with_slots_and_sums_to_one() {
        let (corpus, encoder, params) = small_setup();
        let report = trace(&corpus[0], &encoder, &params).unwrap();
        assert_eq!(report.lines.len(), params.mem_slots);
        assert_eq!(report.attentions.len(), params.hops);
        for (i, line) in report.lines.iter().enumerate() {
            match line {
                Some(text) => assert_eq!(text, &corpus[0].story[i]),
                None => assert!(i >= corpus[0].story.len()),
            }
        }
        for p in &report.attentions {
            assert_eq!(p.len(), params.mem_slots);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let rendered = report.render();
        assert!(rendered.contains("hop 1"));
        assert!(rendered.contains("query"));
    }

    #[test]
    fn untrained_attention_is_near_uniform() {
        let (corpus, encoder, params) = small_setup();
        let uniform = 1.0 / params.mem_slots as f64;
        for sample in corpus.iter().take(10) {
            let report = trace(sample, &encoder, &params).unwrap();
            for p in &report.attentions {
                for &w in p {
                    assert!(w < 3.0 * uniform, "weight {w} far from uniform");
                }
            }
        }
    }

    #[test]
    fn geometry_diagonals_and_symmetry() {
        let (_, encoder, params) = small_setup();
        let atlas = EmbeddingAtlas::new(&params, &encoder.vocab).unwrap();
        assert!(atlas.numeric.len() >= 2);
        // Values are sorted ascending.
        for pair in atlas.numeric.windows(2) {
            assert!(pair[0].1 < pair[1].1);
        }
        for table in [Table::Val, Table::Addr] {
            let g = number_geometry(&atlas, table).unwrap();
            let n = g.values.len();
            for i in 0..n {
                assert!((g.cosine[[i, i]] - 1.0).abs() < 1e-12);
                assert_eq!(g.l2[[i, i]], 0.0);
                for j in 0..n {
                    assert_eq!(g.l2[[i, j]], g.l2[[j, i]]);
                    assert!((g.cosine[[i, j]] - g.cosine[[j, i]]).abs() < 1e-12);
                    assert!(g.cosine[[i, j]].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn random_embeddings_have_no_numeric_order() {
        let (_, encoder, params) = small_setup();
        let atlas = EmbeddingAtlas::new(&params, &encoder.vocab).unwrap();
        for table in [Table::Val, Table::Addr] {
            let rho = numeric_l2_spearman(&atlas, table).unwrap();
            assert!(rho.abs() < 0.2, "untrained correlation {rho}");
        }
    }

    #[test]
    fn spearman_reference_behaviour() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y_mono = [10.0, 20.0, 25.0, 40.0, 80.0];
        assert!((spearman(&x, &y_mono) - 1.0).abs() < 1e-12);
        let y_anti = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &y_anti) + 1.0).abs() < 1e-12);
        let y_const = [7.0; 5];
        assert_eq!(spearman(&x, &y_const), 0.0);
        // Hand-checked with ties: x ranks (1, 2.5, 2.5, 4), y ranks
        // (2, 1, 3, 4) give rho = 0.6324555...
        let x = [1.0, 2.0, 2.0, 9.0];
        let y = [1.0, 0.0, 5.0, 9.0];
        assert!((spearman(&x, &y) - 0.6324555320336759).abs() < 1e-12);
    }

    #[test]
    fn export_row_count_and_determinism() {
        let (_, encoder, params) = small_setup();
        let atlas = EmbeddingAtlas::new(&params, &encoder.vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let full = dir.path().join("embeddings.csv");
        export_embeddings(&atlas, &full, Table::Addr, false).unwrap();
        let text = std::fs::read_to_string(&full).unwrap();
        // Header plus one row per non-padding token.
        assert_eq!(text.lines().count(), encoder.vocab.len());

        let again = dir.path().join("embeddings2.csv");
        export_embeddings(&atlas, &again, Table::Addr, false).unwrap();
        assert_eq!(
            std::fs::read(&full).unwrap(),
            std::fs::read(&again).unwrap()
        );

        let numeric = dir.path().join("numbers.csv");
        export_embeddings(&atlas, &numeric, Table::Addr, true).unwrap();
        let text = std::fs::read_to_string(&numeric).unwrap();
        let values: Vec<i64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn matrix_and_heatmap_files_are_written() {
        let (_, encoder, params) = small_setup();
        let atlas = EmbeddingAtlas::new(&params, &encoder.vocab).unwrap();
        let g = number_geometry(&atlas, Table::Addr).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let grid = dir.path().join("l2.tsv");
        write_matrix(&grid, &g.tokens, &g.l2).unwrap();
        let text = std::fs::read_to_string(&grid).unwrap();
        assert_eq!(text.lines().count(), g.values.len() + 1);

        let png = dir.path().join("l2.png");
        heatmap_png(&g.l2, &png, 2).unwrap();
        assert!(png.metadata().unwrap().len() > 0);
    }

    #[test]
    fn too_few_numbers_is_an_error() {
        let (_, encoder, params) = small_setup();
        let mut atlas = EmbeddingAtlas::new(&params, &encoder.vocab).unwrap();
        atlas.numeric.truncate(1);
        assert!(matches!(
            number_geometry(&atlas, Table::Val),
            Err(IntrospectError::TooFewNumbers(1))
        ));
    }
}

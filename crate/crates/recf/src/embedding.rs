//! Skip-gram word embeddings with hierarchical softmax, and the item
//! description matrix built by averaging word vectors.
//!
//! The probability of an output word given a center word is a product of
//! sigmoid branch decisions along the output word's Huffman path:
//!
//! ```text
//! p(w | center) = prod_i sigma(s_i * <v_node_i, v_center>)
//! ```
//!
//! with `s_i = +1` when the path steps to the designated child of node
//! `i` and `-1` otherwise. Summed over all leaves this is exactly 1,
//! which is the point of the tree parameterization: no normalization
//! over the vocabulary is ever computed.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{HuffmanTree, Vocabulary};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Fraction of `initial_step` the linear decay bottoms out at.
const MIN_STEP_FRAC: f64 = 0.025;

/// Training settings for [`train_skipgram`].
#[derive(Debug, Clone)]
pub struct SkipgramConfig {
    /// Embedding dimension `e`.
    pub dim: usize,
    /// Context radius `c`: positions `t-c..=t+c` (minus `t`) are paired
    /// with the center word at `t`.
    pub window: usize,
    pub epochs: usize,
    /// Step size at the start of training; decays linearly to
    /// 2.5% of itself over all epochs.
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            window: 5,
            epochs: 15,
            initial_step: 0.025,
            seed: 1,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if self.window < 1 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !self.initial_step.is_finite() || self.initial_step <= 0.0 {
            return Err(Error::InvalidParameter(
                "initial_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Word vectors plus inner-node vectors for one vocabulary.
///
/// Rows of `word_vecs` line up with vocabulary ids; `node_vecs` rows line
/// up with the Huffman tree's inner-node ids (`K - 1` of them).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    word_vecs: Vec<f64>,
    node_vecs: Vec<f64>,
}

impl EmbeddingTable {
    /// Assemble a table from raw parts. `word_vecs` must hold
    /// `words.len() * dim` finite values and `node_vecs`
    /// `(words.len() - 1) * dim` (zero rows for a single word).
    pub fn from_parts(
        words: Vec<String>,
        dim: usize,
        word_vecs: Vec<f64>,
        node_vecs: Vec<f64>,
    ) -> Result<Self> {
        let k = words.len();
        if k == 0 {
            return Err(Error::InvalidParameter("no words".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if word_vecs.len() != k * dim {
            return Err(Error::DimensionMismatch(format!(
                "word vectors: expected {} values, got {}",
                k * dim,
                word_vecs.len()
            )));
        }
        if node_vecs.len() != k.saturating_sub(1) * dim {
            return Err(Error::DimensionMismatch(format!(
                "node vectors: expected {} values, got {}",
                k.saturating_sub(1) * dim,
                node_vecs.len()
            )));
        }
        if !word_vecs.iter().chain(node_vecs.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(
                "embedding values must be finite".into(),
            ));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Self {
            words,
            index,
            dim,
            word_vecs,
            node_vecs,
        })
    }

    fn init(vocab: &Vocabulary, cfg: &SkipgramConfig) -> Self {
        let k = vocab.len();
        let dim = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let half = 0.5 / dim as f64;
        let word_vecs: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-half..half)).collect();
        let node_vecs = vec![0.0; k.saturating_sub(1) * dim];
        let words: Vec<String> = (0..k).map(|w| vocab.word(w).to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            words,
            index,
            dim,
            word_vecs,
            node_vecs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.words.len().saturating_sub(1)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn word_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn word_vector(&self, id: usize) -> &[f64] {
        &self.word_vecs[id * self.dim..(id + 1) * self.dim]
    }

    pub fn node_vector(&self, node: usize) -> &[f64] {
        &self.node_vecs[node * self.dim..(node + 1) * self.dim]
    }

    /// One hierarchical-softmax SGD update for the pair
    /// (`center` as input, `output` as predicted word).
    fn hs_update(&mut self, center: usize, output: usize, tree: &HuffmanTree, step: f64) {
        let dim = self.dim;
        let mut accum = vec![0.0; dim];
        let path = tree.path(output);
        let code = tree.code(output);
        for (&node, &designated) in path.iter().zip(code) {
            let n = node as usize;
            let mut x = 0.0;
            for k in 0..dim {
                x += self.node_vecs[n * dim + k] * self.word_vecs[center * dim + k];
            }
            let target = if designated { 1.0 } else { 0.0 };
            let g = step * (target - sigmoid(x));
            for (k, acc) in accum.iter_mut().enumerate() {
                *acc += g * self.node_vecs[n * dim + k];
                self.node_vecs[n * dim + k] += g * self.word_vecs[center * dim + k];
            }
        }
        for (k, acc) in accum.iter().enumerate() {
            self.word_vecs[center * dim + k] += *acc;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability that `target` is the output word given `center`, under the
/// hierarchical-softmax parameterization. Always in (0, 1]; exactly 1 for
/// a single-word vocabulary.
pub fn hs_probability(
    center: usize,
    target: usize,
    table: &EmbeddingTable,
    tree: &HuffmanTree,
) -> Result<f64> {
    let k = table.n_words();
    if center >= k {
        return Err(Error::UnknownWord { id: center, len: k });
    }
    if target >= k || tree.n_words() != k {
        return Err(Error::UnknownWord { id: target, len: k });
    }
    let center_vec = table.word_vector(center);
    let mut p = 1.0;
    for (&node, &designated) in tree.path(target).iter().zip(tree.code(target)) {
        let node_vec = table.node_vector(node as usize);
        let x: f64 = node_vec.iter().zip(center_vec).map(|(a, b)| a * b).sum();
        p *= sigmoid(if designated { x } else { -x });
    }
    Ok(p)
}

/// Average log probability of context words within `window` of each
/// center, over all in-vocabulary positions. Zero when the corpus holds
/// no usable position.
pub fn avg_log_prob(
    sentences: &[Vec<String>],
    table: &EmbeddingTable,
    tree: &HuffmanTree,
    window: usize,
) -> f64 {
    let ids = to_ids(sentences, |t| table.word_id(t));
    let total: usize = ids.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for sent in &ids {
        for t in 0..sent.len() {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(sent.len() - 1);
            for j in lo..=hi {
                if j != t {
                    sum += hs_probability(sent[t], sent[j], table, tree)
                        .expect("ids are in range")
                        .ln();
                }
            }
        }
    }
    sum / total as f64
}

fn to_ids<F: Fn(&str) -> Option<usize>>(
    sentences: &[Vec<String>],
    lookup: F,
) -> Vec<Vec<usize>> {
    sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| lookup(t)).collect())
        .collect()
}

/// Train skip-gram word vectors with hierarchical softmax.
///
/// Single-threaded on purpose: given the same seed the result is
/// bit-identical. Out-of-vocabulary tokens are dropped before windowing,
/// and windows never cross sentence boundaries.
pub fn train_skipgram(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    tree: &HuffmanTree,
    cfg: &SkipgramConfig,
) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if tree.n_words() != vocab.len() {
        return Err(Error::DimensionMismatch(format!(
            "tree built for {} words, vocabulary has {}",
            tree.n_words(),
            vocab.len()
        )));
    }
    let ids = to_ids(sentences, |t| vocab.id(t));
    let total_tokens: usize = ids.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut table = EmbeddingTable::init(vocab, cfg);
    let total = (total_tokens * cfg.epochs) as f64;
    let mut processed = 0usize;
    for _ in 0..cfg.epochs {
        for sent in &ids {
            for t in 0..sent.len() {
                let frac = processed as f64 / total;
                let step = cfg.initial_step * (1.0 - frac).max(MIN_STEP_FRAC);
                processed += 1;
                train_position(&mut table, sent, t, cfg.window, tree, step);
            }
        }
    }
    Ok(table)
}

fn train_position(
    table: &mut EmbeddingTable,
    sent: &[usize],
    t: usize,
    window: usize,
    tree: &HuffmanTree,
    step: f64,
) {
    let lo = t.saturating_sub(window);
    let hi = (t + window).min(sent.len() - 1);
    for j in lo..=hi {
        if j != t {
            table.hs_update(sent[t], sent[j], tree, step);
        }
    }
}

/// Per-item description vectors: row `v` is the mean of the word vectors
/// of item `v`'s in-vocabulary tokens, with a presence flag that is false
/// when no token was usable.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionMatrix {
    rows: DMatrix<f64>,
    present: Vec<bool>,
}

impl DescriptionMatrix {
    /// All-missing matrix with the given shape (used when no description
    /// file is available).
    pub fn empty(n_items: usize, dim: usize) -> Self {
        Self {
            rows: DMatrix::zeros(n_items, dim),
            present: vec![false; n_items],
        }
    }

    pub fn from_rows(rows: DMatrix<f64>, present: Vec<bool>) -> Result<Self> {
        if rows.nrows() != present.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows vs {} presence flags",
                rows.nrows(),
                present.len()
            )));
        }
        Ok(Self { rows, present })
    }

    pub fn n_items(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn present(&self, item: usize) -> bool {
        self.present[item]
    }

    pub fn n_present(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row(&self, item: usize) -> Vec<f64> {
        self.rows.row(item).iter().copied().collect()
    }
}

/// Mean word vector of the in-vocabulary subset of `tokens`.
///
/// Returns the zero vector and a `false` flag when every token is
/// out-of-vocabulary (or the list is empty) — such an item counts as
/// having no description at all.
pub fn embed_description<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
) -> (Vec<f64>, bool) {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for tok in tokens {
        if let Some(id) = table.word_id(tok.as_ref()) {
            for (s, x) in sum.iter_mut().zip(table.word_vector(id)) {
                *s += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return (sum, false);
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    (sum, true)
}

/// Stack [`embed_description`] over all items into an M x e matrix.
pub fn build_description_matrix(
    item_tokens: &[Vec<String>],
    table: &EmbeddingTable,
) -> DescriptionMatrix {
    let m = item_tokens.len();
    let e = table.dim();
    let mut rows = DMatrix::zeros(m, e);
    let mut present = vec![false; m];
    for (v, tokens) in item_tokens.iter().enumerate() {
        let (vec, flag) = embed_description(tokens, table);
        present[v] = flag;
        for (j, x) in vec.into_iter().enumerate() {
            rows[(v, j)] = x;
        }
    }
    DescriptionMatrix { rows, present }
}

fn nodes_path(words_path: &Path) -> PathBuf {
    let mut os = words_path.as_os_str().to_os_string();
    os.push(".nodes");
    PathBuf::from(os)
}

/// Write the table as text: `K e` on the first line, then one
/// `token v1 .. ve` line per word. Inner-node vectors go to a sibling
/// `<path>.nodes` file with the same layout keyed by node id.
pub fn save_embeddings(table: &EmbeddingTable, words_path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", table.n_words(), table.dim()));
    for w in 0..table.n_words() {
        out.push_str(table.word(w));
        for x in table.word_vector(w) {
            out.push_str(&format!(" {x}"));
        }
        out.push('\n');
    }
    write_atomic(words_path, &out)?;

    let mut nodes = String::new();
    nodes.push_str(&format!("{} {}\n", table.n_nodes(), table.dim()));
    for n in 0..table.n_nodes() {
        nodes.push_str(&n.to_string());
        for x in table.node_vector(n) {
            nodes.push_str(&format!(" {x}"));
        }
        nodes.push('\n');
    }
    write_atomic(&nodes_path(words_path), &nodes)
}

/// Load a table written by [`save_embeddings`].
pub fn load_embeddings(words_path: &Path) -> Result<EmbeddingTable> {
    let bad = |msg: String| Error::BadEmbeddingFile(msg);
    let file = std::fs::File::open(words_path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty words file".into()))??;
    let (k, dim) = parse_header(&header).ok_or_else(|| bad(format!("bad header {header:?}")))?;
    let mut words = Vec::with_capacity(k);
    let mut word_vecs = Vec::with_capacity(k * dim);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| bad(format!("word line {} empty", i + 2)))?;
        words.push(token.to_string());
        parse_floats(&mut parts, dim, &mut word_vecs)
            .map_err(|m| bad(format!("word line {}: {m}", i + 2)))?;
    }
    if words.len() != k {
        return Err(bad(format!("expected {k} words, found {}", words.len())));
    }

    let nodes_file = std::fs::File::open(nodes_path(words_path))?;
    let mut lines = BufReader::new(nodes_file).lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty nodes file".into()))??;
    let (n_nodes, node_dim) =
        parse_header(&header).ok_or_else(|| bad(format!("bad header {header:?}")))?;
    if n_nodes != k.saturating_sub(1) || node_dim != dim {
        return Err(bad(format!(
            "nodes file shape {n_nodes}x{node_dim} does not match words {k}x{dim}"
        )));
    }
    let mut node_vecs = vec![0.0; n_nodes * dim];
    let mut seen = vec![false; n_nodes];
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let id: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("node line {}: bad id", i + 2)))?;
        if id >= n_nodes || seen[id] {
            return Err(bad(format!("node line {}: id {id} out of range or repeated", i + 2)));
        }
        seen[id] = true;
        let mut row = Vec::with_capacity(dim);
        parse_floats(&mut parts, dim, &mut row)
            .map_err(|m| bad(format!("node line {}: {m}", i + 2)))?;
        node_vecs[id * dim..(id + 1) * dim].copy_from_slice(&row);
    }
    if !seen.iter().all(|s| *s) {
        return Err(bad("missing node rows".into()));
    }
    EmbeddingTable::from_parts(words, dim, word_vecs, node_vecs)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let k = it.next()?.parse().ok()?;
    let e = it.next()?.parse().ok()?;
    it.next().is_none().then_some((k, e))
}

fn parse_floats<'a, I: Iterator<Item = &'a str>>(
    parts: &mut I,
    n: usize,
    out: &mut Vec<f64>,
) -> std::result::Result<(), String> {
    for _ in 0..n {
        let s = parts.next().ok_or_else(|| "too few values".to_string())?;
        let x: f64 = s.parse().map_err(|_| format!("bad float {s:?}"))?;
        out.push(x);
    }
    if parts.next().is_some() {
        return Err("too many values".into());
    }
    Ok(())
}

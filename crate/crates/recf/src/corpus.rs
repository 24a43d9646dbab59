//! Tokenization, vocabularies, and the Huffman coding tree used by
//! hierarchical softmax.
//!
//! Item descriptions in rating datasets are tag-like ("animation,
//! children's, comedy"), so the tokenizer is deliberately small:
//! lowercase, split on anything that is not alphanumeric, but keep
//! apostrophes that sit inside a word so tags like `children's` survive
//! as one token.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Lowercase `text` and split it into tokens.
///
/// A token is a maximal run of alphanumeric characters and internal
/// apostrophes. Surrounding punctuation is stripped; apostrophes at the
/// edges of a run are trimmed so `'action'` becomes `action` while
/// `children's` stays intact.
///
/// ```
/// let toks = recf::corpus::tokenize("animation, children's, comedy");
/// assert_eq!(toks, vec!["animation", "children's", "comedy"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|raw| raw.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// A frequency-counted vocabulary with a dense id per retained token.
///
/// Ids are assigned in first-appearance order of the corpus stream, which
/// makes every downstream structure (Huffman tree, embedding rows)
/// deterministic for a given corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary directly from `(token, count)` pairs, keeping
    /// the given order. Rejects duplicates, zero counts, and emptiness.
    pub fn from_counts<S: Into<String>>(pairs: Vec<(S, u64)>) -> Result<Self> {
        let mut words = Vec::with_capacity(pairs.len());
        let mut counts = Vec::with_capacity(pairs.len());
        let mut index = HashMap::new();
        for (word, count) in pairs {
            let word = word.into();
            if count == 0 {
                return Err(Error::InvalidParameter(format!(
                    "zero count for token {word:?}"
                )));
            }
            if index.insert(word.clone(), words.len()).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate token {word:?}"
                )));
            }
            words.push(word);
            counts.push(count);
        }
        if words.is_empty() {
            return Err(Error::EmptyVocabulary { min_count: 1 });
        }
        Ok(Self {
            words,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Dense id of `token`, if retained.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// `(token, count)` pairs in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words
            .iter()
            .map(String::as_str)
            .zip(self.counts.iter().copied())
    }

    /// Debug dump: one `token<TAB>count` line per word, in id order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (word, count) in self.iter() {
            out.push_str(word);
            out.push('\t');
            out.push_str(&count.to_string());
            out.push('\n');
        }
        out
    }
}

/// Count tokens from a stream and retain those with count >= `min_count`.
///
/// Retained words keep their first-appearance order. Errors if nothing
/// survives the threshold.
pub fn build_vocab<I, S>(corpus: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(Error::InvalidParameter(
            "min_count must be at least 1".into(),
        ));
    }
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for token in corpus {
        let token = token.as_ref();
        match counts.get_mut(token) {
            Some(c) => *c += 1,
            None => {
                order.push(token.to_string());
                counts.insert(token.to_string(), 1);
            }
        }
    }
    let pairs: Vec<(String, u64)> = order
        .into_iter()
        .filter_map(|w| {
            let c = counts[&w];
            (c >= min_count).then_some((w, c))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }
    Vocabulary::from_counts(pairs)
}

/// Huffman coding tree over vocabulary frequencies.
///
/// For `K` words the tree has exactly `K - 1` inner nodes. Each word
/// stores the inner-node ids on its root-to-leaf path together with a
/// branch code (`true` = the designated child, `false` = the other one).
/// Path and code always have the same length; a single-word vocabulary
/// gets an empty path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTree {
    n_words: usize,
    paths: Vec<Vec<u32>>,
    codes: Vec<Vec<bool>>,
}

impl HuffmanTree {
    pub fn n_words(&self) -> usize {
        self.n_words
    }

    /// Number of inner nodes: `K - 1` (0 for a single-word vocabulary).
    pub fn n_inner(&self) -> usize {
        self.n_words.saturating_sub(1)
    }

    /// Inner-node ids from the root down to the leaf's parent.
    pub fn path(&self, word: usize) -> &[u32] {
        &self.paths[word]
    }

    /// Branch decisions taken along [`HuffmanTree::path`].
    pub fn code(&self, word: usize) -> &[bool] {
        &self.codes[word]
    }

    /// Code length of `word` (number of branch decisions to reach it).
    pub fn depth(&self, word: usize) -> usize {
        self.codes[word].len()
    }
}

/// Build the Huffman tree for a vocabulary.
///
/// Ties between equal frequencies are broken by node id — leaves carry
/// their vocabulary id, merged nodes get ids in creation order after all
/// leaves — with the lower id treated as the lighter node. The result is
/// therefore a pure function of the vocabulary.
pub fn build_huffman(vocab: &Vocabulary) -> HuffmanTree {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let k = vocab.len();
    if k == 1 {
        return HuffmanTree {
            n_words: 1,
            paths: vec![Vec::new()],
            codes: vec![Vec::new()],
        };
    }

    // Arena: leaves occupy 0..k, merged nodes k..2k-1 in creation order.
    let mut count: Vec<u64> = (0..k).map(|w| vocab.count(w)).collect();
    let mut children: Vec<Option<(usize, usize)>> = vec![None; k];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        (0..k).map(|w| Reverse((count[w], w))).collect();

    while heap.len() >= 2 {
        let Reverse((_, light)) = heap.pop().unwrap();
        let Reverse((_, heavy)) = heap.pop().unwrap();
        let id = count.len();
        count.push(count[light] + count[heavy]);
        children.push(Some((light, heavy)));
        heap.push(Reverse((count[id], id)));
    }
    let root = count.len() - 1;

    // Walk down from the root, recording each word's inner-node path and
    // branch code. The designated child is the lighter (first-popped) one.
    let mut paths = vec![Vec::new(); k];
    let mut codes = vec![Vec::new(); k];
    let mut stack = vec![(root, Vec::new(), Vec::new())];
    while let Some((node, path, code)) = stack.pop() {
        match children[node] {
            None => {
                paths[node] = path;
                codes[node] = code;
            }
            Some((light, heavy)) => {
                let inner_id = (node - k) as u32;
                let mut lp = path.clone();
                let mut lc = code.clone();
                lp.push(inner_id);
                lc.push(true);
                stack.push((light, lp, lc));
                let mut rp = path;
                let mut rc = code;
                rp.push(inner_id);
                rc.push(false);
                stack.push((heavy, rp, rc));
            }
        }
    }

    HuffmanTree {
        n_words: k,
        paths,
        codes,
    }
}

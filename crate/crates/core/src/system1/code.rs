//! Binary prefix codes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::SymbolId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("invalid bit character {0:?}")]
    InvalidBit(char),
    #[error("codeword set is not prefix-free: {0}")]
    NotPrefixFree(String),
}

/// A sequence of bits.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn push(&mut self, b: bool) {
        self.0.push(b);
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn starts_with(&self, prefix: &BitString) -> bool {
        self.0.starts_with(&prefix.0)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = CodeError;
    fn from_str(s: &str) -> Result<Self, CodeError> {
        s.chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(CodeError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl From<BitString> for String {
    fn from(b: BitString) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for BitString {
    type Error = CodeError;
    fn try_from(s: String) -> Result<Self, CodeError> {
        s.parse()
    }
}

/// Binary prefix code indexed by symbol id. Symbols without a codeword
/// cannot be encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    codes: Vec<Option<BitString>>,
}

impl Codebook {
    /// Build from explicit codewords, checking the prefix property.
    pub fn from_codes(codes: Vec<Option<BitString>>) -> Result<Self, CodeError> {
        let words: Vec<(usize, &BitString)> = codes
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
            .collect();
        for &(i, a) in &words {
            if a.is_empty() {
                return Err(CodeError::NotPrefixFree(format!(
                    "symbol {i} has an empty codeword"
                )));
            }
            for &(j, b) in &words {
                if i != j && b.starts_with(a) {
                    return Err(CodeError::NotPrefixFree(format!(
                        "codeword of symbol {i} ({a}) prefixes symbol {j} ({b})"
                    )));
                }
            }
        }
        Ok(Self { codes })
    }

    /// Alphabet size of the code; fixed to binary.
    pub fn alphabet_size(&self) -> usize {
        2
    }

    pub fn num_symbols(&self) -> usize {
        self.codes.len()
    }

    pub fn code(&self, s: SymbolId) -> Option<&BitString> {
        self.codes.get(s).and_then(Option::as_ref)
    }

    pub fn codes(&self) -> &[Option<BitString>] {
        &self.codes
    }

    /// Codeword length of `s`, if it has one.
    pub fn length(&self, s: SymbolId) -> Option<usize> {
        self.code(s).map(BitString::len)
    }

    /// `Σ 2^{-ℓ}` over symbols with a codeword.
    pub fn kraft_sum(&self) -> f64 {
        self.codes
            .iter()
            .flatten()
            .map(|c| 2f64.powi(-(c.len() as i32)))
            .sum()
    }

    /// `Σ freq_s · ℓ_s`; symbols without a codeword must have zero frequency.
    pub fn expected_length(&self, freqs: &[f64]) -> f64 {
        freqs
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0.0)
            .map(|(s, &f)| {
                f * self
                    .length(s)
                    .unwrap_or_else(|| panic!("symbol {s} has mass but no codeword"))
                    as f64
            })
            .sum()
    }
}

#[derive(Debug)]
struct HeapNode {
    weight: f64,
    min_symbol: usize,
    node: usize,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapNode {}

impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the std max-heap pops the lightest node, then the smallest id.
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| other.min_symbol.cmp(&self.min_symbol))
    }
}

/// Optimal binary prefix code for the positive entries of `freqs`.
///
/// The two lightest nodes are merged first; equal weights are ordered by the
/// smallest symbol id in each subtree, and the node popped first takes the
/// `0` branch. Zero-frequency symbols get no codeword. A lone positive
/// symbol gets the one-bit codeword `0`.
pub fn huffman(freqs: &[f64]) -> Codebook {
    assert!(
        freqs.iter().all(|&f| f >= 0.0 && f.is_finite()),
        "frequencies must be finite and nonnegative"
    );
    let mut codes: Vec<Option<BitString>> = vec![None; freqs.len()];
    let leaves: Vec<usize> = (0..freqs.len()).filter(|&s| freqs[s] > 0.0).collect();
    assert!(
        !leaves.is_empty(),
        "at least one frequency must be positive"
    );
    if leaves.len() == 1 {
        codes[leaves[0]] = Some(BitString::from_bits(vec![false]));
        return Codebook { codes };
    }

    // Node storage: leaves first, then internal nodes as (zero child, one child).
    let mut children: Vec<Option<(usize, usize)>> = vec![None; leaves.len()];
    let mut heap: BinaryHeap<HeapNode> = leaves
        .iter()
        .enumerate()
        .map(|(node, &s)| HeapNode {
            weight: freqs[s],
            min_symbol: s,
            node,
        })
        .collect();
    while heap.len() > 1 {
        let zero = heap.pop().expect("len > 1");
        let one = heap.pop().expect("len > 1");
        children.push(Some((zero.node, one.node)));
        heap.push(HeapNode {
            weight: zero.weight + one.weight,
            min_symbol: zero.min_symbol.min(one.min_symbol),
            node: children.len() - 1,
        });
    }
    let root = heap.pop().expect("one node left").node;

    let mut stack = vec![(root, BitString::new())];
    while let Some((node, prefix)) = stack.pop() {
        match children[node] {
            Some((z, o)) => {
                let mut zp = prefix.clone();
                zp.push(false);
                let mut op = prefix;
                op.push(true);
                stack.push((z, zp));
                stack.push((o, op));
            }
            None => codes[leaves[node]] = Some(prefix),
        }
    }
    Codebook { codes }
}

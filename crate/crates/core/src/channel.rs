//! Bit transport: source coding of symbol sequences and a binary erasure
//! channel with per-bit feedback retransmission.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::Rng;
use crate::system1::{BitString, Codebook};
use crate::world::SymbolId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("erasure probability must lie in [0, 1), got {0}")]
    InvalidErasure(String),
    #[error("symbol {0} has no codeword")]
    UnknownSymbol(SymbolId),
    #[error("bit stream ends inside a codeword")]
    TruncatedStream,
    #[error("no codeword continues the prefix ending at bit {position}")]
    InvalidPrefix { position: usize },
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// Binary erasure channel with ideal feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    erasure_prob: f64,
}

impl ChannelSpec {
    pub fn new(erasure_prob: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&erasure_prob) {
            return Err(ChannelError::InvalidErasure(erasure_prob.to_string()));
        }
        Ok(Self { erasure_prob })
    }

    pub fn noiseless() -> Self {
        Self { erasure_prob: 0.0 }
    }

    pub fn erasure_prob(&self) -> f64 {
        self.erasure_prob
    }

    /// Mean channel uses per delivered bit, `1 / (1 - p_e)`.
    pub fn expected_uses_per_bit(&self) -> f64 {
        1.0 / (1.0 - self.erasure_prob)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionLog {
    pub payload_bits: u64,
    pub total_channel_uses: u64,
    pub erasures: u64,
}

impl TransmissionLog {
    pub fn merge(&mut self, other: &TransmissionLog) {
        self.payload_bits += other.payload_bits;
        self.total_channel_uses += other.total_channel_uses;
        self.erasures += other.erasures;
    }
}

/// Send every bit until it gets through. The delivered stream always equals
/// the input; the log counts every use of the channel.
pub fn transmit(
    bits: &BitString,
    spec: &ChannelSpec,
    rng: &mut Rng,
) -> (BitString, TransmissionLog) {
    let mut log = TransmissionLog {
        payload_bits: bits.len() as u64,
        ..Default::default()
    };
    let p = spec.erasure_prob;
    for _ in 0..bits.len() {
        loop {
            log.total_channel_uses += 1;
            if p > 0.0 && rng.uniform() < p {
                log.erasures += 1;
            } else {
                break;
            }
        }
    }
    (bits.clone(), log)
}

/// Concatenate the codewords of `symbols` in order.
pub fn encode_sr(symbols: &[SymbolId], codebook: &Codebook) -> Result<BitString> {
    let mut out = BitString::new();
    for &s in symbols {
        let w = codebook.code(s).ok_or(ChannelError::UnknownSymbol(s))?;
        out.extend_from(w);
    }
    Ok(out)
}

#[derive(Default)]
struct TrieNode {
    child: [Option<usize>; 2],
    symbol: Option<SymbolId>,
}

fn build_trie(codebook: &Codebook) -> Vec<TrieNode> {
    let mut nodes = vec![TrieNode::default()];
    for (s, code) in codebook.codes().iter().enumerate() {
        let Some(code) = code else { continue };
        let mut at = 0;
        for &b in code.bits() {
            let next = match nodes[at].child[b as usize] {
                Some(n) => n,
                None => {
                    nodes.push(TrieNode::default());
                    let n = nodes.len() - 1;
                    nodes[at].child[b as usize] = Some(n);
                    n
                }
            };
            at = next;
        }
        nodes[at].symbol = Some(s);
    }
    nodes
}

/// Inverse of [`encode_sr`].
pub fn decode_sr(bits: &BitString, codebook: &Codebook) -> Result<Vec<SymbolId>> {
    let trie = build_trie(codebook);
    let mut out = Vec::new();
    let mut at = 0;
    for (i, &b) in bits.bits().iter().enumerate() {
        at = trie[at].child[b as usize].ok_or(ChannelError::InvalidPrefix { position: i })?;
        if let Some(s) = trie[at].symbol {
            out.push(s);
            at = 0;
        }
    }
    if at != 0 {
        return Err(ChannelError::TruncatedStream);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{normalize, Rng};
    use crate::system1::huffman;
    use proptest::prelude::*;

    fn code(words: &[&str]) -> Codebook {
        Codebook::from_codes(words.iter().map(|w| Some(w.parse().unwrap())).collect()).unwrap()
    }

    #[test]
    fn erasure_range() {
        assert!(ChannelSpec::new(0.0).is_ok());
        assert!(ChannelSpec::new(1.0).is_err());
        assert!(ChannelSpec::new(-0.1).is_err());
        assert!(ChannelSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn noiseless_uses_one_per_bit() {
        let bits: BitString = "0110100".parse().unwrap();
        let (out, log) = transmit(&bits, &ChannelSpec::noiseless(), &mut Rng::new(1));
        assert_eq!(out, bits);
        assert_eq!(log.total_channel_uses, 7);
        assert_eq!(log.erasures, 0);
    }

    #[test]
    fn mean_uses_follow_geometric_law() {
        let bits = BitString::from_bits(vec![true; 10_000]);
        for (p, expected) in [(0.2, 12_500.0), (0.1, 10_000.0 / 0.9)] {
            let spec = ChannelSpec::new(p).unwrap();
            let mut rng = Rng::new(2);
            let trials = 200;
            let mut total = 0u64;
            for _ in 0..trials {
                let (out, log) = transmit(&bits, &spec, &mut rng);
                assert_eq!(out, bits);
                assert_eq!(log.total_channel_uses, log.payload_bits + log.erasures);
                total += log.total_channel_uses;
            }
            let mean = total as f64 / trials as f64;
            assert!((mean / expected - 1.0).abs() < 0.02, "p={p}: {mean}");
        }
    }

    #[test]
    fn encode_examples() {
        let cb = code(&["0", "10"]);
        assert_eq!(encode_sr(&[0], &cb).unwrap().to_string(), "0");
        assert_eq!(encode_sr(&[0, 1, 0], &cb).unwrap().to_string(), "0100");
        assert_eq!(encode_sr(&[2], &cb), Err(ChannelError::UnknownSymbol(2)));
    }

    #[test]
    fn decode_examples() {
        let cb = code(&["0", "10"]);
        assert_eq!(
            decode_sr(&"0100".parse().unwrap(), &cb).unwrap(),
            vec![0, 1, 0]
        );
        assert_eq!(
            decode_sr(&"1".parse().unwrap(), &cb),
            Err(ChannelError::TruncatedStream)
        );
        assert_eq!(
            decode_sr(&"011".parse().unwrap(), &cb),
            Err(ChannelError::InvalidPrefix { position: 2 })
        );
        assert_eq!(
            decode_sr(&BitString::new(), &cb).unwrap(),
            Vec::<usize>::new()
        );
    }

    proptest! {
        #[test]
        fn round_trip(
            raw in prop::collection::vec(0.01f64..1.0, 2..40),
            picks in prop::collection::vec(any::<prop::sample::Index>(), 0..30),
        ) {
            let f = normalize(&raw).unwrap();
            let cb = huffman(&f);
            let symbols: Vec<usize> = picks.iter().map(|i| i.index(f.len())).collect();
            let bits = encode_sr(&symbols, &cb).unwrap();
            prop_assert_eq!(decode_sr(&bits, &cb).unwrap(), symbols);
        }
    }
}

//! `[n,k]` MDS erasure code over GF(2^8).
//!
//! Every coded element is `len (4 bytes, big endian) || shard`, where the
//! shard is one of the `n` Reed–Solomon outputs over the value zero-padded to
//! `k * shard_len` bytes. The first `k` shards are the data itself.

use reed_solomon_erasure::galois_8::ReedSolomon;
use thiserror::Error;

use crate::types::{CodedElement, Tag, Value};

pub const HEADER_LEN: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid code parameters n={n}, k={k} (need 1 <= k <= n <= 255)")]
    Params { n: usize, k: usize },
    #[error("need {needed} fragments to decode, got {got}")]
    InsufficientFragments { needed: usize, got: usize },
    #[error("fragments carry different tags ({0} and {1})")]
    MixedTags(Tag, Tag),
    #[error("fragment {0} is bottom")]
    BottomFragment(usize),
    #[error("fragment index {0} is duplicated or out of range")]
    BadIndex(usize),
    #[error("fragment {0} is malformed")]
    Malformed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecParams {
    pub n: usize,
    pub k: usize,
}

impl CodecParams {
    pub fn new(n: usize, k: usize) -> Result<Self, CodecError> {
        if k == 0 || k > n || n > 255 {
            return Err(CodecError::Params { n, k });
        }
        Ok(CodecParams { n, k })
    }

    /// Bytes of coded payload per element for a value of `len` bytes.
    pub fn shard_len(&self, len: usize) -> usize {
        len.div_ceil(self.k).max(1)
    }

    fn rs(&self) -> Option<ReedSolomon> {
        if self.n == self.k {
            return None;
        }
        Some(ReedSolomon::new(self.k, self.n - self.k).expect("parameters validated"))
    }
}

/// Splits `value` into `n` coded elements, element `i` being `Φ_i(value)`.
pub fn encode(params: CodecParams, tag: Tag, value: &[u8]) -> Result<Vec<CodedElement>, CodecError> {
    let shards = encode_raw(params, value)?;
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(origin_index, bytes)| CodedElement { tag, fragment: Value::Bytes(bytes), origin_index })
        .collect())
}

/// Raw form of [`encode`]; returns the `n` framed fragments.
pub fn encode_raw(params: CodecParams, value: &[u8]) -> Result<Vec<Vec<u8>>, CodecError> {
    let params = CodecParams::new(params.n, params.k)?;
    let len = u32::try_from(value.len()).expect("values are below 4 GiB");
    let shard_len = params.shard_len(value.len());
    let mut shards: Vec<Vec<u8>> = (0..params.n).map(|_| vec![0u8; shard_len]).collect();
    for (i, chunk) in value.chunks(shard_len).enumerate() {
        shards[i][..chunk.len()].copy_from_slice(chunk);
    }
    if let Some(rs) = params.rs() {
        rs.encode(&mut shards).expect("shards are equally sized");
    }
    Ok(shards
        .into_iter()
        .map(|shard| {
            let mut framed = Vec::with_capacity(HEADER_LEN + shard.len());
            framed.extend_from_slice(&len.to_be_bytes());
            framed.extend_from_slice(&shard);
            framed
        })
        .collect())
}

/// Reconstructs the value from at least `k` elements of one tag.
pub fn decode(params: CodecParams, fragments: &[CodedElement]) -> Result<Vec<u8>, CodecError> {
    if let Some(first) = fragments.first() {
        if let Some(other) = fragments.iter().find(|f| f.tag != first.tag) {
            return Err(CodecError::MixedTags(first.tag, other.tag));
        }
    }
    let mut raw = Vec::with_capacity(fragments.len());
    for f in fragments {
        match &f.fragment {
            Value::Bytes(b) => raw.push((f.origin_index, b.as_slice())),
            Value::Bottom => return Err(CodecError::BottomFragment(f.origin_index)),
        }
    }
    decode_raw(params, &raw)
}

/// Raw form of [`decode`] over `(origin_index, framed fragment)` pairs.
pub fn decode_raw(params: CodecParams, fragments: &[(usize, &[u8])]) -> Result<Vec<u8>, CodecError> {
    let params = CodecParams::new(params.n, params.k)?;
    let mut slots: Vec<Option<Vec<u8>>> = vec![None; params.n];
    let mut len: Option<usize> = None;
    let mut present = 0;
    for &(index, framed) in fragments {
        if index >= params.n || slots[index].is_some() {
            return Err(CodecError::BadIndex(index));
        }
        if framed.len() < HEADER_LEN + 1 {
            return Err(CodecError::Malformed(index));
        }
        let (head, shard) = framed.split_at(HEADER_LEN);
        let this_len = u32::from_be_bytes(head.try_into().expect("4-byte header")) as usize;
        if params.shard_len(this_len) != shard.len() || len.is_some_and(|l| l != this_len) {
            return Err(CodecError::Malformed(index));
        }
        len = Some(this_len);
        slots[index] = Some(shard.to_vec());
        present += 1;
    }
    if present < params.k {
        return Err(CodecError::InsufficientFragments { needed: params.k, got: present });
    }
    let len = len.expect("at least one fragment");
    if let Some(rs) = params.rs() {
        rs.reconstruct_data(&mut slots).map_err(|_| CodecError::InsufficientFragments {
            needed: params.k,
            got: present,
        })?;
    }
    let mut out = Vec::with_capacity(len);
    for shard in slots.into_iter().take(params.k) {
        out.extend_from_slice(&shard.expect("data shards reconstructed"));
    }
    out.truncate(len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
            .collect()
    }

    #[test]
    fn fragment_sizes() {
        // 6 bytes over k=2: 3 coded bytes plus the 4-byte length header each.
        let params = CodecParams::new(4, 2).unwrap();
        let frags = encode(params, Tag::INITIAL, b"abcdef").unwrap();
        assert_eq!(frags.len(), 4);
        for (i, f) in frags.iter().enumerate() {
            assert_eq!(f.origin_index, i);
            assert_eq!(f.fragment.bytes().unwrap().len(), 3 + HEADER_LEN);
        }
    }

    #[test]
    fn single_server_code_is_replication() {
        let params = CodecParams::new(1, 1).unwrap();
        let frags = encode_raw(params, b"value").unwrap();
        assert_eq!(frags.len(), 1);
        assert_eq!(&frags[0][HEADER_LEN..], b"value");
        assert_eq!(decode_raw(params, &[(0, &frags[0])]).unwrap(), b"value");
    }

    #[test]
    fn decode_from_specific_subset() {
        let params = CodecParams::new(4, 2).unwrap();
        let frags = encode(params, Tag::new(3, 1), b"hello world").unwrap();
        let picked = vec![frags[1].clone(), frags[3].clone()];
        assert_eq!(decode(params, &picked).unwrap(), b"hello world");
    }

    #[test]
    fn no_parity_round_trip() {
        let params = CodecParams::new(3, 3).unwrap();
        let frags = encode(params, Tag::INITIAL, b"0123456789").unwrap();
        assert_eq!(decode(params, &frags).unwrap(), b"0123456789");
    }

    #[test]
    fn error_paths() {
        assert!(CodecParams::new(2, 3).is_err());
        assert!(CodecParams::new(256, 3).is_err());
        let params = CodecParams::new(5, 3).unwrap();
        let frags = encode(params, Tag::new(1, 1), b"abcdefgh").unwrap();
        assert_eq!(
            decode(params, &frags[..2]),
            Err(CodecError::InsufficientFragments { needed: 3, got: 2 })
        );
        let mut mixed = frags[..3].to_vec();
        mixed[1].tag = Tag::new(2, 1);
        assert!(matches!(decode(params, &mixed), Err(CodecError::MixedTags(..))));
        let mut bottom = frags[..3].to_vec();
        bottom[2].fragment = Value::Bottom;
        assert_eq!(decode(params, &bottom), Err(CodecError::BottomFragment(2)));
        let dup = vec![frags[0].clone(), frags[0].clone(), frags[1].clone()];
        assert_eq!(decode(params, &dup), Err(CodecError::BadIndex(0)));
    }

    #[test]
    fn empty_value_round_trips() {
        let params = CodecParams::new(3, 2).unwrap();
        let frags = encode(params, Tag::INITIAL, b"").unwrap();
        assert_eq!(decode(params, &frags[1..]).unwrap(), b"");
    }

    #[test]
    fn every_k_subset_decodes_for_small_codes() {
        let value: Vec<u8> = (0u8..=40).map(|b| b.wrapping_mul(37)).collect();
        for n in 1..=6 {
            for k in 1..=n {
                let params = CodecParams::new(n, k).unwrap();
                let frags = encode(params, Tag::new(1, 1), &value).unwrap();
                for subset in subsets(n, k) {
                    let picked: Vec<_> = subset.iter().map(|&i| frags[i].clone()).collect();
                    assert_eq!(decode(params, &picked).unwrap(), value, "n={n} k={k} {subset:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn sampled_subsets_of_11_6_decode(value in proptest::collection::vec(any::<u8>(), 0..200), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let params = CodecParams::new(11, 6).unwrap();
            let frags = encode(params, Tag::new(2, 3), &value).unwrap();
            let mut idx: Vec<usize> = (0..11).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let picked: Vec<_> = idx[..6].iter().map(|&i| frags[i].clone()).collect();
            prop_assert_eq!(decode(params, &picked).unwrap(), value);
        }
    }
}

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::FeatureError;

/// A SHA-256 digest; ordered as a 256-bit big-endian unsigned integer.
pub type Digest = [u8; 32];

/// Packed bit string, MSB-first within each byte.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        Self { bytes, len }
    }

    /// Bit string of `len` bits backed by `bytes`; trailing padding bits must be zero.
    pub fn new(bytes: Vec<u8>, len: usize) -> Result<Self, FeatureError> {
        if bytes.len() != len.div_ceil(8) {
            return Err(FeatureError::Decode(format!("{} bytes cannot hold exactly {len} bits", bytes.len())));
        }
        let pad = bytes.len() * 8 - len;
        if pad > 0 && bytes[bytes.len() - 1] & ((1u8 << pad) - 1) != 0 {
            return Err(FeatureError::Decode("non-zero padding bits".into()));
        }
        Ok(Self { bytes, len })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                bytes[i / 8] |= 0x80 >> (i % 8);
            }
        }
        Self { bytes, len: bits.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn hamming(&self, other: &BitString) -> u32 {
        self.bytes.iter().zip(&other.bytes).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTag {
    DigestSet,
    BitString,
    IntVector,
    RealVector,
}

/// Tag plus length; buffered features must agree on it.
///
/// Digest sets vary in size, so their length is not part of the shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub tag: FeatureTag,
    pub len: Option<usize>,
}

/// Output of a feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FeatureRepr", try_from = "FeatureRepr")]
pub enum Feature {
    /// Sorted, de-duplicated digests.
    DigestSet(Vec<Digest>),
    BitString(BitString),
    IntVector(Vec<i64>),
    RealVector(Vec<f64>),
}

impl Feature {
    /// Builds a digest-set feature, sorting and de-duplicating the input.
    pub fn digest_set(mut digests: Vec<Digest>) -> Self {
        digests.sort_unstable();
        digests.dedup();
        Self::DigestSet(digests)
    }

    pub fn tag(&self) -> FeatureTag {
        match self {
            Self::DigestSet(_) => FeatureTag::DigestSet,
            Self::BitString(_) => FeatureTag::BitString,
            Self::IntVector(_) => FeatureTag::IntVector,
            Self::RealVector(_) => FeatureTag::RealVector,
        }
    }

    pub fn shape(&self) -> FeatureShape {
        let len = match self {
            Self::DigestSet(_) => None,
            Self::BitString(b) => Some(b.len()),
            Self::IntVector(v) => Some(v.len()),
            Self::RealVector(v) => Some(v.len()),
        };
        FeatureShape { tag: self.tag(), len }
    }
}

fn sorted_intersection_len(a: &[Digest], b: &[Digest]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Intrinsic distance between two features of the same tag and shape.
///
/// * digest sets: number of non-common digests, `max(|a|, |b|) − |a ∩ b|`
/// * bit strings: hamming distance
/// * integer vectors: `0` when equal, `+∞` otherwise (exact-match detection)
/// * real vectors: Euclidean distance
pub fn feature_distance(a: &Feature, b: &Feature) -> Result<f64, FeatureError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.tag != sb.tag {
        return Err(FeatureError::TagMismatch { left: sa.tag, right: sb.tag });
    }
    if let (Some(l), Some(r)) = (sa.len, sb.len) {
        if l != r {
            return Err(FeatureError::DimensionMismatch { left: l, right: r });
        }
    }
    Ok(match (a, b) {
        (Feature::DigestSet(x), Feature::DigestSet(y)) => (x.len().max(y.len()) - sorted_intersection_len(x, y)) as f64,
        (Feature::BitString(x), Feature::BitString(y)) => f64::from(x.hamming(y)),
        (Feature::IntVector(x), Feature::IntVector(y)) => {
            if x == y {
                0.0
            } else {
                f64::INFINITY
            }
        }
        (Feature::RealVector(x), Feature::RealVector(y)) => crate::scalar::distance(x, y),
        _ => unreachable!("tags checked above"),
    })
}

/// Wire representation used by the JSON-lines feature cache.
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum FeatureRepr {
    DigestSet { digests: Vec<String> },
    BitString { len: usize, hex: String },
    IntVector { values: Vec<i64> },
    RealVector { values: Vec<f64> },
}

impl From<Feature> for FeatureRepr {
    fn from(f: Feature) -> Self {
        match f {
            Feature::DigestSet(d) => Self::DigestSet { digests: d.iter().map(hex::encode).collect() },
            Feature::BitString(b) => Self::BitString { len: b.len, hex: hex::encode(&b.bytes) },
            Feature::IntVector(values) => Self::IntVector { values },
            Feature::RealVector(values) => Self::RealVector { values },
        }
    }
}

impl TryFrom<FeatureRepr> for Feature {
    type Error = FeatureError;

    fn try_from(r: FeatureRepr) -> Result<Self, Self::Error> {
        Ok(match r {
            FeatureRepr::DigestSet { digests } => {
                let mut out = Vec::with_capacity(digests.len());
                for h in digests {
                    let mut d = [0u8; 32];
                    hex::decode_to_slice(&h, &mut d).map_err(|e| FeatureError::Decode(format!("digest {h:?}: {e}")))?;
                    out.push(d);
                }
                if out.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(FeatureError::Decode("digests not strictly ascending".into()));
                }
                Self::DigestSet(out)
            }
            FeatureRepr::BitString { len, hex } => {
                let bytes = hex::decode(&hex).map_err(|e| FeatureError::Decode(e.to_string()))?;
                Self::BitString(BitString::new(bytes, len)?)
            }
            FeatureRepr::IntVector { values } => Self::IntVector(values),
            FeatureRepr::RealVector { values } => Self::RealVector(values),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn digest(b: u8) -> Digest {
        let mut d = [0u8; 32];
        d[0] = b;
        d
    }

    #[test]
    fn digest_set_distances() {
        let a = Feature::digest_set((0..50).map(digest).collect());
        let b = Feature::digest_set((50..100).map(digest).collect());
        assert_eq!(feature_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(feature_distance(&a, &b).unwrap(), 50.0);
        let c = Feature::digest_set((10..60).map(digest).collect());
        assert_eq!(feature_distance(&a, &c).unwrap(), 10.0);
    }

    #[test]
    fn bitstring_distance() {
        let a = Feature::BitString(BitString::from_bits(&[true, false, true, false]));
        let b = Feature::BitString(BitString::from_bits(&[false, true, true, false]));
        assert_eq!(feature_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn int_vector_exact_match() {
        let a = Feature::IntVector(vec![0, 1]);
        let b = Feature::IntVector(vec![0, 2]);
        assert_eq!(feature_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(feature_distance(&a, &b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mismatches_are_errors() {
        let a = Feature::IntVector(vec![0, 1]);
        let b = Feature::RealVector(vec![0.0, 1.0]);
        assert!(matches!(feature_distance(&a, &b), Err(FeatureError::TagMismatch { .. })));
        let c = Feature::IntVector(vec![0, 1, 2]);
        assert_eq!(feature_distance(&a, &c), Err(FeatureError::DimensionMismatch { left: 2, right: 3 }));
    }

    #[test]
    fn bitstring_padding_checked() {
        assert!(BitString::new(vec![0b1010_0000], 3).is_ok());
        assert!(BitString::new(vec![0b1010_0001], 3).is_err());
        assert!(BitString::new(vec![0, 0], 3).is_err());
    }

    #[test]
    fn serialized_shapes() {
        let f = Feature::BitString(BitString::from_bits(&[true, true, false, true, false]));
        assert_eq!(serde_json::to_string(&f).unwrap(), r#"{"type":"bit_string","len":5,"hex":"d0"}"#);
        let f = Feature::IntVector(vec![-1, 3]);
        assert_eq!(serde_json::to_string(&f).unwrap(), r#"{"type":"int_vector","values":[-1,3]}"#);
        let bad = r#"{"type":"digest_set","digests":["zz"]}"#;
        assert!(serde_json::from_str::<Feature>(bad).is_err());
    }

    fn arb_feature_pair() -> impl Strategy<Value = (Feature, Feature)> {
        prop_oneof![
            (prop::collection::vec(any::<u8>(), 0..20), prop::collection::vec(any::<u8>(), 0..20)).prop_map(
                |(a, b)| (
                    Feature::digest_set(a.into_iter().map(digest).collect()),
                    Feature::digest_set(b.into_iter().map(digest).collect())
                )
            ),
            (1usize..6)
                .prop_flat_map(|n| (prop::collection::vec(any::<u8>(), n), prop::collection::vec(any::<u8>(), n)))
                .prop_map(|(a, b)| (
                    Feature::BitString(BitString::from_bytes(a)),
                    Feature::BitString(BitString::from_bytes(b))
                )),
            (1usize..6)
                .prop_flat_map(|n| (prop::collection::vec(-3i64..3, n), prop::collection::vec(-3i64..3, n)))
                .prop_map(|(a, b)| (Feature::IntVector(a), Feature::IntVector(b))),
            (1usize..6)
                .prop_flat_map(|n| (prop::collection::vec(-1e3f64..1e3, n), prop::collection::vec(-1e3f64..1e3, n)))
                .prop_map(|(a, b)| (Feature::RealVector(a), Feature::RealVector(b))),
        ]
    }

    proptest! {
        #[test]
        fn distance_is_a_premetric((a, b) in arb_feature_pair()) {
            let ab = feature_distance(&a, &b).unwrap();
            let ba = feature_distance(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(feature_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn json_round_trip_preserves_distance((a, b) in arb_feature_pair()) {
            let a2: Feature = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            let b2: Feature = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
            prop_assert_eq!(&a2, &a);
            prop_assert_eq!(
                feature_distance(&a2, &b2).unwrap().to_bits(),
                feature_distance(&a, &b).unwrap().to_bits()
            );
        }
    }
}

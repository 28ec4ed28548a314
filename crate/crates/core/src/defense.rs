//! Stateful detector: a buffer of past query features and a distance threshold.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractors::{feature_distance, ExtractorConfig, Feature, FeatureError, FeatureShape};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("query feature shape {got:?} does not match buffered shape {expected:?}")]
    TagMismatch { expected: FeatureShape, got: FeatureShape },
    #[error("threshold must be a non-negative number, got {0}")]
    BadThreshold(f64),
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub query_id: QueryId,
    pub flagged: bool,
    /// `+∞` when the buffer was empty.
    pub min_distance: f64,
    pub matched_id: Option<QueryId>,
}

#[derive(Debug, Clone)]
pub struct DetectorState {
    buffer: VecDeque<(QueryId, Feature)>,
    capacity: Option<usize>,
    tau: f64,
    extractor: Option<ExtractorConfig>,
    next_id: u64,
}

impl DetectorState {
    /// Detector with threshold `tau`; `capacity = None` keeps every query.
    pub fn new(tau: f64, capacity: Option<usize>) -> Result<Self, DefenseError> {
        if !(tau >= 0.0) {
            return Err(DefenseError::BadThreshold(tau));
        }
        if capacity == Some(0) {
            return Err(DefenseError::ZeroCapacity);
        }
        Ok(Self { buffer: VecDeque::new(), capacity, tau, extractor: None, next_id: 0 })
    }

    /// Records which extractor produced the buffered features.
    pub fn with_extractor(mut self, cfg: ExtractorConfig) -> Self {
        self.extractor = Some(cfg);
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn extractor(&self) -> Option<&ExtractorConfig> {
        self.extractor.as_ref()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Compares `feature` against every buffered query, then buffers it
    /// (flagged or not), evicting the oldest entry when over capacity.
    pub fn check_and_insert(&mut self, feature: Feature) -> Result<Verdict, DefenseError> {
        if let Some((_, first)) = self.buffer.front() {
            let (expected, got) = (first.shape(), feature.shape());
            if expected != got {
                return Err(DefenseError::TagMismatch { expected, got });
            }
        }
        let mut min_distance = f64::INFINITY;
        let mut nearest = None;
        for (id, stored) in &self.buffer {
            let d = feature_distance(&feature, stored)?;
            if d < min_distance {
                min_distance = d;
                nearest = Some(*id);
            }
        }
        let flagged = min_distance <= self.tau;
        let query_id = QueryId(self.next_id);
        self.next_id += 1;
        self.buffer.push_back((query_id, feature));
        if let Some(cap) = self.capacity {
            while self.buffer.len() > cap {
                self.buffer.pop_front();
            }
        }
        Ok(Verdict { query_id, flagged, min_distance, matched_id: if flagged { nearest } else { None } })
    }

    /// Empties the buffer, keeping threshold, capacity and extractor.
    pub fn reset(&mut self) {
        self.buffer.clear();
    }
}

#[derive(Serialize)]
struct VerdictRow {
    query_id: u64,
    flagged: bool,
    min_distance: f64,
    matched_id: Option<u64>,
}

/// Writes `query_id,flagged,min_distance,matched_id` rows; `matched_id` is empty when unflagged.
pub fn write_verdicts_csv<W: Write>(out: W, verdicts: &[Verdict]) -> Result<(), DefenseError> {
    let mut w = csv::Writer::from_writer(out);
    for v in verdicts {
        w.serialize(VerdictRow {
            query_id: v.query_id.0,
            flagged: v.flagged,
            min_distance: v.min_distance,
            matched_id: v.matched_id.map(|m| m.0),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(v: &[i64]) -> Feature {
        Feature::IntVector(v.to_vec())
    }

    #[test]
    fn empty_buffer_never_flags() {
        let mut s = DetectorState::new(5.0, None).unwrap();
        let v = s.check_and_insert(iv(&[1, 2])).unwrap();
        assert!(!v.flagged);
        assert_eq!(v.min_distance, f64::INFINITY);
        assert_eq!(v.matched_id, None);
    }

    #[test]
    fn duplicate_is_flagged_at_zero() {
        let mut s = DetectorState::new(0.0, None).unwrap();
        s.check_and_insert(iv(&[0, 1])).unwrap();
        let v = s.check_and_insert(iv(&[0, 1])).unwrap();
        assert!(v.flagged);
        assert_eq!(v.min_distance, 0.0);
        assert_eq!(v.matched_id, Some(QueryId(0)));
    }

    #[test]
    fn toy_exact_match_semantics() {
        let mut s = DetectorState::new(0.0, None).unwrap();
        s.check_and_insert(iv(&[0, 1])).unwrap();
        let v = s.check_and_insert(iv(&[0, 2])).unwrap();
        assert!(!v.flagged);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = DetectorState::new(0.0, None).unwrap();
        s.check_and_insert(iv(&[0, 1])).unwrap();
        assert!(matches!(
            s.check_and_insert(Feature::RealVector(vec![0.0, 1.0])),
            Err(DefenseError::TagMismatch { .. })
        ));
        assert!(matches!(s.check_and_insert(iv(&[0])), Err(DefenseError::TagMismatch { .. })));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn fifo_eviction() {
        let mut s = DetectorState::new(0.0, Some(2)).unwrap();
        s.check_and_insert(iv(&[1])).unwrap();
        s.check_and_insert(iv(&[2])).unwrap();
        s.check_and_insert(iv(&[3])).unwrap();
        assert_eq!(s.len(), 2);
        // [1] was evicted
        assert!(!s.check_and_insert(iv(&[1])).unwrap().flagged);
        assert!(s.check_and_insert(iv(&[1])).unwrap().flagged);
    }

    #[test]
    fn reset_is_idempotent() {
        let mut s = DetectorState::new(1.0, Some(4)).unwrap().with_extractor(ExtractorConfig::Toy(Default::default()));
        s.check_and_insert(iv(&[1])).unwrap();
        s.reset();
        assert!(s.is_empty());
        s.reset();
        assert!(s.is_empty());
        assert_eq!((s.tau(), s.capacity()), (1.0, Some(4)));
        assert!(s.extractor().is_some());
        assert!(!s.check_and_insert(iv(&[1])).unwrap().flagged);
    }

    #[test]
    fn bad_construction() {
        assert!(DetectorState::new(-1.0, None).is_err());
        assert!(DetectorState::new(f64::NAN, None).is_err());
        assert!(DetectorState::new(1.0, Some(0)).is_err());
    }

    #[test]
    fn csv_export() {
        let mut s = DetectorState::new(0.5, None).unwrap();
        let verdicts: Vec<_> = [vec![0.0], vec![0.25], vec![3.0]]
            .into_iter()
            .map(|v| s.check_and_insert(Feature::RealVector(v)).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_verdicts_csv(&mut buf, &verdicts).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "query_id,flagged,min_distance,matched_id\n0,false,inf,\n1,true,0.25,0\n2,false,2.75,\n"
        );
    }

    fn replay(stream: &[Vec<f64>], tau: f64) -> Vec<bool> {
        let mut s = DetectorState::new(tau, None).unwrap();
        stream.iter().map(|f| s.check_and_insert(Feature::RealVector(f.clone())).unwrap().flagged).collect()
    }

    proptest! {
        #[test]
        fn flags_monotone_in_tau(
            stream in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..30),
            t1 in 0.0f64..3.0,
            dt in 0.0f64..3.0,
        ) {
            let lo = replay(&stream, t1);
            let hi = replay(&stream, t1 + dt);
            prop_assert!(!lo[0] && !hi[0]);
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(!a || *b);
            }
        }

        #[test]
        fn resubmission_always_flags(
            stream in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..20),
            pick in 0usize..20,
            tau in 0.0f64..1.0,
        ) {
            let mut s = DetectorState::new(tau, None).unwrap();
            for f in &stream {
                s.check_and_insert(Feature::RealVector(f.clone())).unwrap();
            }
            let again = stream[pick % stream.len()].clone();
            prop_assert!(s.check_and_insert(Feature::RealVector(again)).unwrap().flagged);
        }
    }
}

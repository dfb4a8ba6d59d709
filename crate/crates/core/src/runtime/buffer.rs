//! Bounded observation history on the edge. Guidance arrives tagged with the
//! stamp of the observation it was computed from; the buffer finds that
//! observation again so the refiner can see what the base saw.

use crate::world::ObservationFrame;
use std::collections::VecDeque;
use thiserror::Error;

/// How many frames the edge keeps (16 s of history at 8 Hz).
pub const OBS_BUFFER_CAP: usize = 128;
/// A guidance echo further than this from every buffered stamp is stale.
pub const STALE_TOLERANCE_US: u64 = 250_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BufferError {
    #[error("no buffered observation within tolerance of echo stamp {echo}")]
    StaleStamp { echo: u64 },
    #[error("observation buffer is empty")]
    EmptyBuffer,
    #[error("observation stamps must be strictly increasing (last {last}, got {got})")]
    NonMonotonicStamp { last: u64, got: u64 },
}

/// Ring buffer of observations with strictly increasing stamps.
#[derive(Debug, Clone, Default)]
pub struct ObsBuffer {
    frames: VecDeque<ObservationFrame>,
}

impl ObsBuffer {
    pub fn new() -> Self {
        ObsBuffer { frames: VecDeque::with_capacity(OBS_BUFFER_CAP) }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn latest(&self) -> Option<&ObservationFrame> {
        self.frames.back()
    }

    /// Append a frame; the oldest frame falls off at capacity.
    pub fn push(&mut self, frame: ObservationFrame) -> Result<(), BufferError> {
        if let Some(last) = self.frames.back() {
            if frame.stamp <= last.stamp {
                return Err(BufferError::NonMonotonicStamp { last: last.stamp, got: frame.stamp });
            }
        }
        if self.frames.len() == OBS_BUFFER_CAP {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        Ok(())
    }

    /// The buffered frame whose stamp is nearest the echo, provided it is
    /// within tolerance. An exact tie between two neighbours resolves to the
    /// later frame.
    pub fn match_stamp(&self, echo: u64) -> Result<&ObservationFrame, BufferError> {
        if self.frames.is_empty() {
            return Err(BufferError::EmptyBuffer);
        }
        // Stamps are strictly increasing: binary search for the insertion
        // point, then compare the two neighbours.
        let idx = self.frames.partition_point(|f| f.stamp < echo);
        let gap = |i: usize| self.frames[i].stamp.abs_diff(echo);
        let best = match (idx.checked_sub(1), (idx < self.frames.len()).then_some(idx)) {
            (Some(lo), Some(hi)) => {
                if gap(hi) <= gap(lo) {
                    hi // ties go to the later stamp
                } else {
                    lo
                }
            }
            (Some(lo), None) => lo,
            (None, Some(hi)) => hi,
            (None, None) => unreachable!("buffer checked non-empty"),
        };
        if gap(best) > STALE_TOLERANCE_US {
            return Err(BufferError::StaleStamp { echo });
        }
        Ok(&self.frames[best])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Directive, GoalSpec};
    use crate::Pose2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(stamp: u64) -> ObservationFrame {
        ObservationFrame {
            stamp,
            scan: vec![1.0; 4],
            odom: Pose2::identity(),
            goal: GoalSpec { pose: Pose2::identity(), directive: Directive::None },
        }
    }

    #[test]
    fn match_agrees_with_a_linear_scan_oracle() {
        let mut buf = ObsBuffer::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut stamps = Vec::new();
        let mut t = 0u64;
        for _ in 0..200 {
            t += rng.gen_range(50_000..200_000);
            stamps.push(t);
            buf.push(frame(t)).unwrap();
        }
        let kept: Vec<u64> = stamps[stamps.len() - OBS_BUFFER_CAP..].to_vec();
        for _ in 0..1000 {
            let echo = rng.gen_range(0..t + 1_000_000);
            // Oracle: linear scan, minimal |gap|, later stamp on ties.
            let oracle = kept
                .iter()
                .map(|&s| (s.abs_diff(echo), s))
                .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .unwrap();
            match buf.match_stamp(echo) {
                Ok(f) => {
                    assert!(oracle.0 <= STALE_TOLERANCE_US);
                    assert_eq!(f.stamp, oracle.1, "echo {echo}");
                }
                Err(BufferError::StaleStamp { .. }) => {
                    assert!(oracle.0 > STALE_TOLERANCE_US, "echo {echo} had match {oracle:?}");
                }
                Err(e) => panic!("unexpected {e}"),
            }
        }
    }

    #[test]
    fn tolerance_boundary_is_inclusive() {
        let mut buf = ObsBuffer::new();
        buf.push(frame(1_000_000)).unwrap();
        assert_eq!(buf.match_stamp(1_000_000 + STALE_TOLERANCE_US).unwrap().stamp, 1_000_000);
        assert_eq!(buf.match_stamp(1_000_000 - STALE_TOLERANCE_US).unwrap().stamp, 1_000_000);
        assert_eq!(
            buf.match_stamp(1_000_000 + STALE_TOLERANCE_US + 1),
            Err(BufferError::StaleStamp { echo: 1_250_001 })
        );
    }

    #[test]
    fn exact_tie_picks_the_later_frame() {
        let mut buf = ObsBuffer::new();
        buf.push(frame(100_000)).unwrap();
        buf.push(frame(300_000)).unwrap();
        assert_eq!(buf.match_stamp(200_000).unwrap().stamp, 300_000);
    }

    #[test]
    fn stamps_must_increase() {
        let mut buf = ObsBuffer::new();
        buf.push(frame(5)).unwrap();
        assert_eq!(
            buf.push(frame(5)),
            Err(BufferError::NonMonotonicStamp { last: 5, got: 5 })
        );
    }

    #[test]
    fn capacity_evicts_the_oldest() {
        // Frames at the edge period: once evicted, a stamp is far outside
        // the match tolerance of anything retained.
        let mut buf = ObsBuffer::new();
        for i in 0..(OBS_BUFFER_CAP as u64 + 10) {
            buf.push(frame((i + 1) * 125_000)).unwrap();
        }
        assert_eq!(buf.len(), OBS_BUFFER_CAP);
        assert_eq!(buf.match_stamp(125_000), Err(BufferError::StaleStamp { echo: 125_000 }));
        // The oldest retained frame is still matchable exactly.
        assert_eq!(buf.match_stamp(11 * 125_000).unwrap().stamp, 11 * 125_000);
    }

    #[test]
    fn empty_buffer_reports_itself() {
        let buf = ObsBuffer::new();
        assert_eq!(buf.match_stamp(0), Err(BufferError::EmptyBuffer));
    }
}

//! Temporal segmentation of sustained vowels.
//!
//! Two schemes: proportional thirds (`Mismatched`, part durations follow the
//! vowel's length) and fixed windows of `w` seconds (`Matched`) cut at the
//! onset, centre and offset, mirror-padding recordings shorter than `w`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioSignal, Instance};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("part `whole` requires the mismatched scheme")]
    WholeRequiresMismatched,
    #[error("matched window must be 1, 2 or 3 seconds, got {0}")]
    BadWindow(u8),
    #[error("signal of {0} samples is too short to split into thirds")]
    TooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Onset,
    Centre,
    Offset,
    Whole,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Onset => "onset",
            Part::Centre => "centre",
            Part::Offset => "offset",
            Part::Whole => "whole",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Part {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "onset" => Ok(Part::Onset),
            "centre" | "center" => Ok(Part::Centre),
            "offset" => Ok(Part::Offset),
            "whole" => Ok(Part::Whole),
            other => Err(format!("unknown part `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Mismatched,
    /// Window length in whole seconds (1, 2 or 3).
    Matched(u8),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Mismatched => f.write_str("mismatched"),
            Scheme::Matched(w) => write!(f, "matched{w}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "mismatched" {
            return Ok(Scheme::Mismatched);
        }
        match s.strip_prefix("matched").map(str::parse::<u8>) {
            Some(Ok(w @ 1..=3)) => Ok(Scheme::Matched(w)),
            _ => Err(format!("unknown scheme `{s}`")),
        }
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentSpec {
    part: Part,
    scheme: Scheme,
}

impl SegmentSpec {
    pub fn new(part: Part, scheme: Scheme) -> Result<Self, SegmentError> {
        match (part, scheme) {
            (Part::Whole, Scheme::Matched(_)) => Err(SegmentError::WholeRequiresMismatched),
            (_, Scheme::Matched(w)) if !(1..=3).contains(&w) => Err(SegmentError::BadWindow(w)),
            _ => Ok(Self { part, scheme }),
        }
    }

    pub fn whole() -> Self {
        Self {
            part: Part::Whole,
            scheme: Scheme::Mismatched,
        }
    }

    pub fn part(&self) -> Part {
        self.part
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
}

/// A piece of an instance's recording ready for feature extraction.
#[derive(Debug, Clone)]
pub struct Segment {
    pub signal: AudioSignal,
    pub source: Instance,
    pub spec: SegmentSpec,
    /// Duration of the unsegmented recording in seconds.
    pub source_duration: f64,
}

/// Sample ranges of the onset/centre/offset thirds: cuts at `floor(L/3)` and
/// `floor(2L/3)`.
pub fn mismatched_bounds(len: usize) -> [Range<usize>; 3] {
    let a = len / 3;
    let b = 2 * len / 3;
    [0..a, a..b, b..len]
}

/// Splits a signal into proportional thirds that tile it exactly.
pub fn segment_mismatched(signal: &AudioSignal) -> Result<[AudioSignal; 3], SegmentError> {
    if signal.len() < 3 {
        return Err(SegmentError::TooShort(signal.len()));
    }
    Ok(mismatched_bounds(signal.len()).map(|r| signal.slice(r.start, r.end)))
}

/// Index of the sample at output position `i` when reflecting a buffer of
/// `len` samples about its end points without repeating them.
pub fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

/// Extends (or truncates) a signal to `target_len` samples by alternating
/// reflection: `[1,2,3]` padded to 8 gives `[1,2,3,2,1,2,3,2]`.
pub fn mirror_pad(signal: &AudioSignal, target_len: usize) -> AudioSignal {
    let src = signal.samples();
    let out: Vec<f64> = (0..target_len.max(1))
        .map(|i| src[reflect_index(i, src.len())])
        .collect();
    AudioSignal::from_trusted(out, signal.sample_rate())
}

/// Window length in samples for `w` seconds, rounded half-up.
pub fn window_samples(w_secs: f64, rate: u32) -> usize {
    (w_secs * rate as f64 + 0.5).floor() as usize
}

/// Start index of each matched window of `win` samples in a signal of `len`
/// samples (requires `len >= win`). The centre start `len/2 - win/2` rounds
/// half-up.
pub fn matched_starts(len: usize, win: usize) -> [usize; 3] {
    debug_assert!(len >= win);
    [0, (len - win).div_ceil(2), len - win]
}

/// Cuts onset `[0, w]`, centre `[N/2 - w/2, N/2 + w/2]` and offset `[N - w, N]`
/// windows. Recordings shorter than `w` are mirror-padded to `w` and all three
/// parts equal the padded signal.
pub fn segment_matched(signal: &AudioSignal, w: u8) -> Result<[AudioSignal; 3], SegmentError> {
    if !(1..=3).contains(&w) {
        return Err(SegmentError::BadWindow(w));
    }
    let win = window_samples(w as f64, signal.sample_rate());
    if signal.len() < win {
        let padded = mirror_pad(signal, win);
        return Ok([padded.clone(), padded.clone(), padded]);
    }
    Ok(matched_starts(signal.len(), win).map(|s| signal.slice(s, s + win)))
}

/// Applies `spec` to an instance's full recording.
pub fn segment(
    instance: &Instance,
    signal: &AudioSignal,
    spec: SegmentSpec,
) -> Result<Segment, SegmentError> {
    let pick = |parts: [AudioSignal; 3]| {
        let [onset, centre, offset] = parts;
        match spec.part {
            Part::Onset => onset,
            Part::Centre => centre,
            Part::Offset => offset,
            Part::Whole => unreachable!("validated in SegmentSpec::new"),
        }
    };
    let piece = match (spec.part, spec.scheme) {
        (Part::Whole, _) => signal.clone(),
        (_, Scheme::Mismatched) => pick(segment_mismatched(signal)?),
        (_, Scheme::Matched(w)) => pick(segment_matched(signal, w)?),
    };
    Ok(Segment {
        signal: piece,
        source: instance.clone(),
        spec,
        source_duration: signal.duration(),
    })
}

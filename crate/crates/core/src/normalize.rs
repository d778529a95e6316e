//! Z-normalization of feature rows, fitted either on a training set or per
//! speaker.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormError {
    #[error("need at least 2 vectors to fit, got {0}")]
    TooFewVectors(usize),
    #[error("speaker {speaker} has {count} instance(s), need at least 2")]
    SpeakerTooFewInstances { speaker: String, count: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no normalization parameters for speaker {0}")]
    UnknownSpeaker(String),
    #[error("{rows} rows but {speakers} speaker labels")]
    LabelCount { rows: usize, speakers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    Standard,
    Speaker,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Standard => "standard",
            NormMode::Speaker => "speaker",
        })
    }
}

impl FromStr for NormMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(NormMode::Standard),
            "speaker" => Ok(NormMode::Speaker),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Moments {
    fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, NormError> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(NormError::TooFewVectors(rows.len()));
        }
        let d = rows[0].len();
        check_dims(&rows, d)?;
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, row: &[f64]) -> Result<Vec<f64>, NormError> {
        check_dims(&[row], self.dim())?;
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }

    fn invert(&self, row: &[f64]) -> Result<Vec<f64>, NormError> {
        check_dims(&[row], self.dim())?;
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| m + z * s)
            .collect())
    }
}

fn check_dims(rows: &[&[f64]], expected: usize) -> Result<(), NormError> {
    match rows.iter().find(|r| r.len() != expected) {
        Some(r) => Err(NormError::DimensionMismatch { expected, got: r.len() }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormParams {
    /// Fitted on one training set and applied to everything else.
    Standard(Moments),
    /// Fitted separately on all instances of each speaker.
    Speaker(BTreeMap<String, Moments>),
}

pub fn fit_standard<R: AsRef<[f64]>>(train: &[R]) -> Result<NormParams, NormError> {
    Moments::fit(train.iter().map(AsRef::as_ref)).map(NormParams::Standard)
}

/// `speakers[i]` labels `rows[i]`.
pub fn fit_speaker<R: AsRef<[f64]>, S: AsRef<str>>(rows: &[R], speakers: &[S]) -> Result<NormParams, NormError> {
    if rows.len() != speakers.len() {
        return Err(NormError::LabelCount { rows: rows.len(), speakers: speakers.len() });
    }
    let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (r, s) in rows.iter().zip(speakers) {
        groups.entry(s.as_ref()).or_default().push(r.as_ref());
    }
    let mut out = BTreeMap::new();
    for (speaker, group) in groups {
        let m = Moments::fit(group.iter().copied()).map_err(|e| match e {
            NormError::TooFewVectors(count) => NormError::SpeakerTooFewInstances {
                speaker: speaker.to_string(),
                count,
            },
            other => other,
        })?;
        out.insert(speaker.to_string(), m);
    }
    Ok(NormParams::Speaker(out))
}

impl NormParams {
    pub fn fit<R: AsRef<[f64]>, S: AsRef<str>>(mode: NormMode, rows: &[R], speakers: &[S]) -> Result<Self, NormError> {
        match mode {
            NormMode::Standard => fit_standard(rows),
            NormMode::Speaker => fit_speaker(rows, speakers),
        }
    }

    fn moments(&self, speaker: &str) -> Result<&Moments, NormError> {
        match self {
            NormParams::Standard(m) => Ok(m),
            NormParams::Speaker(map) => map
                .get(speaker)
                .ok_or_else(|| NormError::UnknownSpeaker(speaker.to_string())),
        }
    }

    /// Normalizes one row; `speaker` is ignored for standard parameters.
    pub fn apply_row(&self, row: &[f64], speaker: &str) -> Result<Vec<f64>, NormError> {
        self.moments(speaker)?.apply(row)
    }

    pub fn apply<R: AsRef<[f64]>, S: AsRef<str>>(&self, rows: &[R], speakers: &[S]) -> Result<Vec<Vec<f64>>, NormError> {
        if matches!(self, NormParams::Speaker(_)) && rows.len() != speakers.len() {
            return Err(NormError::LabelCount { rows: rows.len(), speakers: speakers.len() });
        }
        rows.iter()
            .enumerate()
            .map(|(i, r)| self.apply_row(r.as_ref(), speakers.get(i).map_or("", |s| s.as_ref())))
            .collect()
    }

    /// Inverse of [`NormParams::apply_row`] (not defined for std-0 features,
    /// which come back as their mean).
    pub fn denormalize_row(&self, row: &[f64], speaker: &str) -> Result<Vec<f64>, NormError> {
        self.moments(speaker)?.invert(row)
    }
}

//! Audio buffers, WAV I/O, resampling and cohort manifests.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rate every DSP stage operates at.
pub const CANONICAL_RATE: u32 = 16_000;
/// Lowest sample rate accepted anywhere in the crate.
pub const MIN_RATE: u32 = 8_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: expected mono audio, found {channels} channels")]
    UnsupportedChannels { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported sample encoding ({detail})")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: corrupt WAV header ({detail})")]
    CorruptHeader { path: PathBuf, detail: String },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono sample buffer with its sample rate.
///
/// Samples are finite and within `[-1, 1]`; the buffer is never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::InvalidSignal("empty sample buffer".into()));
        }
        if sample_rate < MIN_RATE {
            return Err(AudioError::InvalidSignal(format!(
                "sample rate {sample_rate} Hz is below {MIN_RATE} Hz"
            )));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(AudioError::InvalidSignal(format!(
                "sample {pos} is {} (must be finite and within [-1, 1])",
                samples[pos]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `samples[range]` at the same rate. Panics on an empty range.
    pub fn slice(&self, start: usize, end: usize) -> AudioSignal {
        assert!(start < end && end <= self.samples.len(), "bad slice {start}..{end}");
        AudioSignal {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Builds a signal from samples already known to satisfy the invariants.
    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(!samples.is_empty());
        AudioSignal {
            samples,
            sample_rate,
        }
    }
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    match err {
        // hound reports short reads as `Other`; the file itself opened fine
        hound::Error::IoError(e)
            if matches!(e.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            AudioError::CorruptHeader {
                path: path.to_path_buf(),
                detail: "unexpected end of file".into(),
            }
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(detail) => AudioError::CorruptHeader {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        },
        other => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Reads a mono RIFF/WAVE file (16-bit PCM or 32-bit IEEE float).
///
/// 16-bit codes map to `code / 32768`, so full-scale positive is `32767/32768`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSignal, AudioError> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut reader = hound::WavReader::new(file).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedChannels {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };
    if samples.is_empty() {
        return Err(AudioError::CorruptHeader {
            path: path.to_path_buf(),
            detail: "no sample data".into(),
        });
    }
    AudioSignal::new(samples, spec.sample_rate).map_err(|e| match e {
        AudioError::InvalidSignal(detail) => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail,
        },
        other => other,
    })
}

/// Quantizes a sample to its 16-bit code (inverse of the `/32768` mapping).
pub fn to_pcm16(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &signal.samples {
        writer
            .write_sample(to_pcm16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * target / source)`. The identity rate returns
/// an exact copy.
pub fn resample(signal: &AudioSignal, target_rate: u32) -> Result<AudioSignal, AudioError> {
    if target_rate < MIN_RATE {
        return Err(AudioError::InvalidSignal(format!(
            "target rate {target_rate} Hz is below {MIN_RATE} Hz"
        )));
    }
    if target_rate == signal.sample_rate {
        return Ok(signal.clone());
    }
    const ZERO_CROSSINGS: f64 = 16.0;
    let ratio = target_rate as f64 / signal.sample_rate as f64;
    // Below-Nyquist cutoff relative to the input rate.
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = ZERO_CROSSINGS / cutoff;
    let input = &signal.samples;
    let n_in = input.len() as isize;
    let n_out = ((input.len() as f64) * ratio).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 / ratio;
        let lo = (t - half_width).ceil() as isize;
        let hi = (t + half_width).floor() as isize;
        let mut acc = 0.0;
        for k in lo.max(0)..=hi.min(n_in - 1) {
            let d = t - k as f64;
            let w = 0.5 + 0.5 * (PI * d / half_width).cos();
            acc += input[k as usize] * cutoff * sinc(cutoff * d) * w;
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    Ok(AudioSignal::from_trusted(out, target_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Session {
    #[serde(rename = "pre")]
    PreTreatment,
    #[serde(rename = "post")]
    PostTreatment,
}

impl Session {
    pub const ALL: [Session; 2] = [Session::PreTreatment, Session::PostTreatment];

    pub fn as_str(self) -> &'static str {
        match self {
            Session::PreTreatment => "pre",
            Session::PostTreatment => "post",
        }
    }
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Session {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" | "pre-treatment" | "pretreatment" => Ok(Session::PreTreatment),
            "post" | "post-treatment" | "posttreatment" => Ok(Session::PostTreatment),
            other => Err(format!("unknown session `{other}` (expected pre|post)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unspecified,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "unspecified" | "u" | "" => Ok(Gender::Unspecified),
            other => Err(format!(
                "unknown gender `{other}` (expected male|female|unspecified)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vowel {
    A,
    E,
    I,
    O,
    U,
}

impl Vowel {
    pub const ALL: [Vowel; 5] = [Vowel::A, Vowel::E, Vowel::I, Vowel::O, Vowel::U];

    pub fn as_char(self) -> char {
        match self {
            Vowel::A => 'a',
            Vowel::E => 'e',
            Vowel::I => 'i',
            Vowel::O => 'o',
            Vowel::U => 'u',
        }
    }
}

/// What a recording contains: one sustained vowel or one read phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstanceKind {
    Vowel(Vowel),
    /// Prosodic phrase index in `1..=20`.
    Phrase(u8),
}

pub const PHRASES_PER_SESSION: u8 = 20;

impl InstanceKind {
    pub fn is_vowel(self) -> bool {
        matches!(self, InstanceKind::Vowel(_))
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceKind::Vowel(v) => write!(f, "{}", v.as_char()),
            InstanceKind::Phrase(i) => write!(f, "phrase{i:02}"),
        }
    }
}

impl FromStr for InstanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let token = s.trim().to_ascii_lowercase();
        match token.as_str() {
            "a" => return Ok(InstanceKind::Vowel(Vowel::A)),
            "e" => return Ok(InstanceKind::Vowel(Vowel::E)),
            "i" => return Ok(InstanceKind::Vowel(Vowel::I)),
            "o" => return Ok(InstanceKind::Vowel(Vowel::O)),
            "u" => return Ok(InstanceKind::Vowel(Vowel::U)),
            _ => {}
        }
        token
            .strip_prefix("phrase")
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| (1..=PHRASES_PER_SESSION).contains(n))
            .map(InstanceKind::Phrase)
            .ok_or_else(|| format!("unknown kind `{token}` (expected a|e|i|o|u|phrase1..phrase20)"))
    }
}

impl Serialize for InstanceKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstanceKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One recording of one speaker in one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub speaker_id: String,
    pub session: Session,
    pub gender: Gender,
    pub kind: InstanceKind,
    pub path: PathBuf,
}

impl Instance {
    fn sort_key(&self) -> (&str, Session, InstanceKind) {
        (&self.speaker_id, self.session, self.kind)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("manifest line {line}: bad {column} value: {message}")]
    BadEnum {
        line: u64,
        column: &'static str,
        message: String,
    },
    #[error("manifest line {line}: duplicate instance ({speaker}, {session}, {kind})")]
    DuplicateInstance {
        line: u64,
        speaker: String,
        session: Session,
        kind: InstanceKind,
    },
    #[error("manifest line {line}: audio file {path} does not exist")]
    MissingFile { line: u64, path: PathBuf },
    #[error("manifest line {line}: speaker {speaker} listed with conflicting genders")]
    InconsistentGender { line: u64, speaker: String },
    #[error("manifest has no instances")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Validated set of instances, sorted by (speaker, session, kind).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortManifest {
    instances: Vec<Instance>,
}

pub const MANIFEST_HEADER: [&str; 5] = ["speaker_id", "session", "gender", "kind", "path"];

impl CohortManifest {
    /// Validates uniqueness and gender consistency, then sorts. File existence
    /// is only checked by [`parse_manifest`].
    pub fn from_instances(mut instances: Vec<Instance>) -> Result<Self, ManifestError> {
        if instances.is_empty() {
            return Err(ManifestError::Empty);
        }
        check_instances(instances.iter().enumerate().map(|(i, inst)| (i as u64 + 2, inst)))?;
        instances.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(Self { instances })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Sorted, de-duplicated speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.instances.iter().map(|i| i.speaker_id.clone()).collect();
        ids.dedup();
        ids
    }

    /// Writes the manifest as CSV; relative paths are written as stored.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER)?;
        for inst in &self.instances {
            w.write_record([
                inst.speaker_id.as_str(),
                inst.session.as_str(),
                inst.gender.as_str(),
                &inst.kind.to_string(),
                &inst.path.to_string_lossy(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_instances<'a>(
    rows: impl Iterator<Item = (u64, &'a Instance)>,
) -> Result<(), ManifestError> {
    let mut seen = BTreeMap::new();
    let mut genders: BTreeMap<&str, Gender> = BTreeMap::new();
    for (line, inst) in rows {
        if seen.insert(inst.sort_key(), line).is_some() {
            return Err(ManifestError::DuplicateInstance {
                line,
                speaker: inst.speaker_id.clone(),
                session: inst.session,
                kind: inst.kind,
            });
        }
        match genders.get(inst.speaker_id.as_str()) {
            Some(g) if *g != inst.gender => {
                return Err(ManifestError::InconsistentGender {
                    line,
                    speaker: inst.speaker_id.clone(),
                })
            }
            Some(_) => {}
            None => {
                genders.insert(&inst.speaker_id, inst.gender);
            }
        }
    }
    Ok(())
}

/// Parses a `speaker_id,session,gender,kind,path` CSV. Relative audio paths
/// resolve against the manifest's directory. Errors cite the file line.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<CohortManifest, ManifestError> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize, ManifestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ManifestError::Malformed {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let [c_spk, c_sess, c_gen, c_kind, c_path] = [
        column("speaker_id")?,
        column("session")?,
        column("gender")?,
        column("kind")?,
        column("path")?,
    ];

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let speaker_id = field(c_spk).to_string();
        if speaker_id.is_empty() {
            return Err(ManifestError::Malformed {
                line,
                message: "empty speaker_id".into(),
            });
        }
        let bad = |column: &'static str| move |message: String| ManifestError::BadEnum {
            line,
            column,
            message,
        };
        let session = field(c_sess).parse().map_err(bad("session"))?;
        let gender = field(c_gen).parse().map_err(bad("gender"))?;
        let kind = field(c_kind).parse().map_err(bad("kind"))?;
        let raw = PathBuf::from(field(c_path));
        let resolved = if raw.is_absolute() { raw } else { base.join(raw) };
        rows.push((
            line,
            Instance {
                speaker_id,
                session,
                gender,
                kind,
                path: resolved,
            },
        ));
    }
    if rows.is_empty() {
        return Err(ManifestError::Empty);
    }
    check_instances(rows.iter().map(|(l, i)| (*l, i)))?;
    for (line, inst) in &rows {
        if !inst.path.is_file() {
            return Err(ManifestError::MissingFile {
                line: *line,
                path: inst.path.clone(),
            });
        }
    }
    let mut instances: Vec<Instance> = rows.into_iter().map(|(_, i)| i).collect();
    instances.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(CohortManifest { instances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_header(path: &Path, channels: u16, bits: u16, fmt: hound::SampleFormat) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: fmt,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for _ in 0..(16 * channels as usize) {
            match fmt {
                hound::SampleFormat::Int if bits == 16 => w.write_sample(0i16).unwrap(),
                hound::SampleFormat::Int => w.write_sample(0i32).unwrap(),
                hound::SampleFormat::Float => w.write_sample(0f32).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        let sig = AudioSignal::new(vec![0.0; 16_000], 16_000).unwrap();
        write_wav(&path, &sig).unwrap();
        let loaded = load_wav(&path).unwrap();
        assert_eq!(loaded.len(), 16_000);
        assert!(loaded.samples().iter().all(|&s| s == 0.0));
        assert_eq!(loaded.sample_rate(), 16_000);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        write_header(&path, 2, 16, hound::SampleFormat::Int);
        assert!(matches!(
            load_wav(&path),
            Err(AudioError::UnsupportedChannels { channels: 2, .. })
        ));
    }

    #[test]
    fn other_encodings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm24.wav");
        write_header(&path, 1, 24, hound::SampleFormat::Int);
        assert!(matches!(
            load_wav(&path),
            Err(AudioError::UnsupportedEncoding { .. })
        ));
    }

    #[test]
    fn float_wav_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        write_header(&path, 1, 32, hound::SampleFormat::Float);
        assert_eq!(load_wav(&path).unwrap().len(), 16);
    }

    #[test]
    fn truncated_header_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.wav");
        std::fs::write(&path, b"RIFF\x10\x00\x00\x00WAVEfmt ").unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(AudioError::CorruptHeader { .. })
        ));
        std::fs::write(&path, b"this is not a wav file at all").unwrap();
        assert!(matches!(
            load_wav(&path),
            Err(AudioError::CorruptHeader { .. })
        ));
    }

    #[test]
    fn full_scale_square_wave_codes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..100 {
            w.write_sample(if i % 2 == 0 { i16::MAX } else { i16::MIN })
                .unwrap();
        }
        w.finalize().unwrap();
        let sig = load_wav(&path).unwrap();
        for (i, &s) in sig.samples().iter().enumerate() {
            let expected = if i % 2 == 0 { 32767.0 / 32768.0 } else { -1.0 };
            assert_eq!(s, expected);
        }
    }

    #[test]
    fn signal_invariants() {
        assert!(AudioSignal::new(vec![], 16_000).is_err());
        assert!(AudioSignal::new(vec![0.0], 4_000).is_err());
        assert!(AudioSignal::new(vec![f64::NAN], 16_000).is_err());
        assert!(AudioSignal::new(vec![1.5], 16_000).is_err());
    }

    fn peak_frequency(samples: &[f64], rate: u32) -> f64 {
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = samples.len().next_power_of_two() * 4;
        let mut buf: Vec<Complex<f64>> = samples
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / samples.len() as f64).cos();
                Complex::new(s * w, 0.0)
            })
            .collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (k, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        k as f64 * rate as f64 / n as f64
    }

    fn tone(freq: f64, rate: u32, secs: f64) -> AudioSignal {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioSignal::new(s, rate).unwrap()
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let sig = tone(440.0, 16_000, 0.1);
        assert_eq!(resample(&sig, 16_000).unwrap(), sig);
    }

    #[test]
    fn resample_keeps_tone_peak() {
        let sig = tone(440.0, 48_000, 1.0);
        let down = resample(&sig, 16_000).unwrap();
        assert_eq!(down.sample_rate(), 16_000);
        assert!((down.len() as i64 - 16_000).abs() <= 1);
        let f = peak_frequency(down.samples(), 16_000);
        assert!((f - 440.0).abs() <= 1.0, "peak at {f}");
    }

    #[test]
    fn upsample_doubles_length() {
        let sig = tone(300.0, 8_000, 0.37);
        let up = resample(&sig, 16_000).unwrap();
        assert!((up.len() as i64 - 2 * sig.len() as i64).abs() <= 1);
        assert!(resample(&sig, 7_999).is_err());
    }

    #[test]
    fn resample_round_trip_keeps_peaks() {
        for freq in [150.0, 1000.0, 3700.0] {
            let sig = tone(freq, 16_000, 1.0);
            let back = resample(&resample(&sig, 32_000).unwrap(), 16_000).unwrap();
            let f = peak_frequency(back.samples(), 16_000);
            assert!((f - freq).abs() <= 1.0, "{freq} -> {f}");
        }
    }

    fn manifest_fixture(dir: &Path, rows: &[&str]) -> PathBuf {
        std::fs::write(dir.join("x.wav"), b"").unwrap();
        let path = dir.join("manifest.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "speaker_id,session,gender,kind,path").unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        path
    }

    #[test]
    fn manifest_counts_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for spk in ["s2", "s1"] {
            for sess in ["post", "pre"] {
                for v in ["u", "o", "i", "e", "a"] {
                    rows.push(format!("{spk},{sess},female,{v},x.wav"));
                }
            }
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let m = parse_manifest(manifest_fixture(dir.path(), &refs)).unwrap();
        assert_eq!(m.len(), 20);
        let first = &m.instances()[0];
        assert_eq!(first.speaker_id, "s1");
        assert_eq!(first.session, Session::PreTreatment);
        assert_eq!(first.kind, InstanceKind::Vowel(Vowel::A));
        assert_eq!(m.speakers(), vec!["s1", "s2"]);

        let mut reversed = refs.clone();
        reversed.reverse();
        let other = parse_manifest(manifest_fixture(dir.path(), &reversed)).unwrap();
        assert_eq!(m, other);
    }

    #[test]
    fn manifest_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_fixture(dir.path(), &["s1,pre,male,a,x.wav", "s1,pre,male,a,x.wav"]);
        assert!(matches!(
            parse_manifest(p),
            Err(ManifestError::DuplicateInstance { line: 3, .. })
        ));
    }

    #[test]
    fn manifest_rejects_bad_session() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_fixture(dir.path(), &["s1,pre,male,a,x.wav", "s1,mid,male,e,x.wav"]);
        match parse_manifest(p) {
            Err(ManifestError::BadEnum { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "session");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_rejects_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_fixture(dir.path(), &["s1,pre,male,a,nope.wav"]);
        assert!(matches!(
            parse_manifest(p),
            Err(ManifestError::MissingFile { line: 2, .. })
        ));
    }

    #[test]
    fn kind_tokens() {
        assert_eq!("phrase07".parse::<InstanceKind>(), Ok(InstanceKind::Phrase(7)));
        assert_eq!("phrase7".parse::<InstanceKind>(), Ok(InstanceKind::Phrase(7)));
        assert!("phrase21".parse::<InstanceKind>().is_err());
        assert_eq!(InstanceKind::Phrase(3).to_string(), "phrase03");
        assert!(InstanceKind::Vowel(Vowel::U) < InstanceKind::Phrase(1));
    }

    proptest::proptest! {
        #[test]
        fn pcm16_round_trip(codes in proptest::collection::vec(proptest::num::i16::ANY, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.wav");
            let sig = AudioSignal::new(codes.iter().map(|&c| c as f64 / 32768.0).collect(), 16_000).unwrap();
            write_wav(&path, &sig).unwrap();
            let back = load_wav(&path).unwrap();
            let round: Vec<i16> = back.samples().iter().map(|&s| to_pcm16(s)).collect();
            proptest::prop_assert_eq!(round, codes);
        }
    }
}

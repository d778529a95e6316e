//! Functionals: reduce frame-level contours to one fixed, named vector per
//! segment.
//!
//! Every name lives in [`FeatureRegistry`]; the order there is the column
//! order of every feature table and model input.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{Gender, Instance, InstanceKind, Session};
use crate::lld::LldContours;
use crate::segment::{Part, Scheme, Segment, SegmentSpec};

#[derive(Debug, Error)]
pub enum FunctionalsError {
    #[error("maximum phonation time is only defined for vowels, not {0}")]
    NotAVowel(InstanceKind),
    #[error("feature table line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("feature table header does not match the registry: {0}")]
    HeaderMismatch(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coefficients of variation with `|mean|` below this are reported as 0.
pub const CV_GUARD: f64 = 1e-6;
/// Voiced runs shorter than this many frames count as unvoiced.
pub const MIN_VOICED_RUN: usize = 3;

/// LLDs with percentile and slope functionals.
const CONTOUR_LLDS: [&str; 2] = ["f0", "loudness"];

/// The ordered feature names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRegistry {
    names: Vec<String>,
}

impl FeatureRegistry {
    fn build() -> Self {
        let c = LldContours::default();
        let mut names = Vec::new();
        for (lld, _) in c.voiced_tracks() {
            names.push(format!("mean_{lld}"));
            names.push(format!("cv_{lld}"));
        }
        for (lld, _) in c.spectral_tracks() {
            for pattern in ["mean_{}", "cv_{}", "mean_{}_v", "cv_{}_v", "mean_{}_uv"] {
                names.push(pattern.replace("{}", lld));
            }
        }
        for lld in CONTOUR_LLDS {
            for pattern in [
                "{}_pctl20",
                "{}_pctl50",
                "{}_pctl80",
                "{}_pctlrange_20_80",
                "mean_{}_rising_slope",
                "std_{}_rising_slope",
                "mean_{}_falling_slope",
                "std_{}_falling_slope",
            ] {
                names.push(pattern.replace("{}", lld));
            }
        }
        for n in [
            "mean_voiced_seg_len",
            "std_voiced_seg_len",
            "voiced_segs_per_sec",
            "mean_unvoiced_seg_len",
            "std_unvoiced_seg_len",
            "loudness_peaks_per_sec",
            "equivalent_sound_level_db",
            "mpt_seconds",
        ] {
            names.push(n.to_string());
        }
        Self { names }
    }

    pub fn global() -> &'static FeatureRegistry {
        static REGISTRY: OnceLock<FeatureRegistry> = OnceLock::new();
        REGISTRY.get_or_init(Self::build)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Functional values for one segment, aligned with the registry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub instance: Instance,
    pub spec: SegmentSpec,
    /// Registry indices that were set to 0 because their domain was empty.
    pub defaulted: Vec<usize>,
}

/// Segment-level facts the contours alone do not carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentContext {
    pub duration_s: f64,
    /// `10·log10(mean x²)` of the segment signal.
    pub level_db: f64,
    pub mpt_seconds: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn cv(v: &[f64]) -> f64 {
    let m = mean(v);
    if m.abs() < CV_GUARD {
        0.0
    } else {
        std_dev(v) / m.abs()
    }
}

/// Linearly interpolated percentile (`q` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q / 100.0;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Slopes (units per second) between consecutive local extrema of a
/// contiguous track, endpoints included: `(rising, falling)`. Falling slopes
/// are reported as magnitudes.
pub fn extremum_slopes(track: &[f64], hop_secs: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rising = Vec::new();
    let mut falling = Vec::new();
    if track.len() < 2 {
        return (rising, falling);
    }
    // collapse plateaus, then keep turning points
    let mut pts: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in track.iter().enumerate() {
        if pts.last().is_none_or(|&(_, p)| p != v) {
            pts.push((i, v));
        }
    }
    let mut ext = vec![pts[0]];
    for w in pts.windows(3) {
        let (a, b, c) = (w[0].1, w[1].1, w[2].1);
        if (b > a && b > c) || (b < a && b < c) {
            ext.push(w[1]);
        }
    }
    if pts.len() > 1 {
        ext.push(*pts.last().expect("non-empty"));
    }
    for w in ext.windows(2) {
        let (i, a) = w[0];
        let (j, b) = w[1];
        let slope = (b - a) / ((j - i) as f64 * hop_secs);
        if slope > 0.0 {
            rising.push(slope);
        } else if slope < 0.0 {
            falling.push(-slope);
        }
    }
    (rising, falling)
}

/// Voicing mask with runs shorter than [`MIN_VOICED_RUN`] frames cleared.
pub fn clean_voicing(voiced: &[bool]) -> Vec<bool> {
    let mut out = voiced.to_vec();
    let mut t = 0;
    while t < out.len() {
        if !out[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < out.len() && out[t] {
            t += 1;
        }
        if t - start < MIN_VOICED_RUN {
            out[start..t].iter_mut().for_each(|v| *v = false);
        }
    }
    out
}

/// Run lengths (frames) of `value` in `mask`.
fn runs(mask: &[bool], value: bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = 0;
    for &m in mask {
        if m == value {
            len += 1;
        } else if len > 0 {
            out.push(len);
            len = 0;
        }
    }
    if len > 0 {
        out.push(len);
    }
    out
}

struct Sink<'a> {
    values: Vec<f64>,
    defaulted: Vec<usize>,
    registry: &'a FeatureRegistry,
}

impl Sink<'_> {
    fn push(&mut self, v: Option<f64>) {
        let i = self.values.len();
        match v {
            Some(v) if v.is_finite() => self.values.push(v),
            _ => {
                self.defaulted.push(i);
                self.values.push(0.0);
            }
        }
        debug_assert!(self.values.len() <= self.registry.len());
    }

    fn mean_cv(&mut self, v: &[f64]) {
        if v.is_empty() {
            self.push(None);
            self.push(None);
        } else {
            self.push(Some(mean(v)));
            self.push(Some(cv(v)));
        }
    }

    fn mean_std(&mut self, v: &[f64]) {
        if v.is_empty() {
            // no run of this direction: a flat contour has zero slope
            self.values.extend([0.0, 0.0]);
        } else {
            self.push(Some(mean(v)));
            self.push(Some(std_dev(v)));
        }
    }
}

/// Registry-ordered functionals of `contours`. Returns the values and the
/// indices that fell back to 0 on an empty domain.
pub fn compute_functionals(contours: &LldContours, ctx: &SegmentContext) -> (Vec<f64>, Vec<usize>) {
    let registry = FeatureRegistry::global();
    let mut sink = Sink {
        values: Vec::with_capacity(registry.len()),
        defaulted: Vec::new(),
        registry,
    };
    let n = contours.len();
    let hop = contours.hop_secs;
    let voiced = &contours.voiced;

    for (_, track) in contours.voiced_tracks() {
        let v: Vec<f64> = track.iter().flatten().copied().collect();
        sink.mean_cv(&v);
    }
    for (name, track) in contours.spectral_tracks() {
        // the first flux frame has no predecessor
        let skip = usize::from(name == "flux" && n > 1);
        let pick = |want: Option<bool>| -> Vec<f64> {
            (skip..n)
                .filter(|&t| want.is_none_or(|w| voiced[t] == w))
                .map(|t| track[t])
                .collect()
        };
        sink.mean_cv(&pick(None));
        sink.mean_cv(&pick(Some(true)));
        let uv = pick(Some(false));
        sink.push((!uv.is_empty()).then(|| mean(&uv)));
    }

    for lld in CONTOUR_LLDS {
        let (values, pieces): (Vec<f64>, Vec<Vec<f64>>) = if lld == "f0" {
            let mut pieces = Vec::new();
            let mut cur = Vec::new();
            for f in &contours.f0_hz {
                match f {
                    Some(f) => cur.push(*f),
                    None if !cur.is_empty() => pieces.push(std::mem::take(&mut cur)),
                    None => {}
                }
            }
            if !cur.is_empty() {
                pieces.push(cur);
            }
            (pieces.concat(), pieces)
        } else {
            (contours.loudness_db.clone(), vec![contours.loudness_db.clone()])
        };
        if values.is_empty() {
            (0..4).for_each(|_| sink.push(None));
        } else {
            let [p20, p50, p80] = [20.0, 50.0, 80.0].map(|q| percentile(&values, q));
            sink.push(Some(p20));
            sink.push(Some(p50));
            sink.push(Some(p80));
            sink.push(Some(p80 - p20));
        }
        let mut rising = Vec::new();
        let mut falling = Vec::new();
        for p in &pieces {
            let (r, f) = extremum_slopes(p, hop);
            rising.extend(r);
            falling.extend(f);
        }
        sink.mean_std(&rising);
        sink.mean_std(&falling);
    }

    let cleaned = clean_voicing(voiced);
    let secs = |r: Vec<usize>| -> Vec<f64> { r.into_iter().map(|l| l as f64 * hop).collect() };
    let vseg = secs(runs(&cleaned, true));
    let useg = secs(runs(&cleaned, false));
    let duration = ctx.duration_s.max(f64::MIN_POSITIVE);
    let seg_stats = |sink: &mut Sink, v: &[f64]| {
        if v.is_empty() {
            sink.push(None);
            sink.push(None);
        } else {
            sink.push(Some(mean(v)));
            sink.push(Some(std_dev(v)));
        }
    };
    seg_stats(&mut sink, &vseg);
    sink.push(Some(vseg.len() as f64 / duration));
    seg_stats(&mut sink, &useg);

    let l = &contours.loudness_db;
    let peaks = (1..l.len().saturating_sub(1))
        .filter(|&t| l[t] > l[t - 1] && l[t] >= l[t + 1])
        .count();
    sink.push(Some(peaks as f64 / duration));
    sink.push(Some(ctx.level_db));
    sink.values.push(ctx.mpt_seconds.unwrap_or(0.0));

    assert_eq!(sink.values.len(), registry.len(), "registry and functionals disagree");
    (sink.values, sink.defaulted)
}

/// Maximum phonation time: the duration of the whole vowel recording, no
/// matter which part was cut out for analysis.
pub fn mpt(segment: &Segment) -> Result<f64, FunctionalsError> {
    match segment.source.kind {
        InstanceKind::Vowel(_) => Ok(segment.source_duration),
        kind => Err(FunctionalsError::NotAVowel(kind)),
    }
}

pub fn apply_functionals(contours: &LldContours, segment: &Segment) -> FeatureVector {
    let x = segment.signal.samples();
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let ctx = SegmentContext {
        duration_s: segment.signal.duration(),
        level_db: 10.0 * (power + 1e-12).log10(),
        mpt_seconds: mpt(segment).ok(),
    };
    let (values, defaulted) = compute_functionals(contours, &ctx);
    FeatureVector {
        values,
        instance: segment.source.clone(),
        spec: segment.spec,
        defaulted,
    }
}

/// One feature-table row: identification columns plus registry values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub speaker_id: String,
    pub session: Session,
    pub gender: Gender,
    pub kind: InstanceKind,
    pub spec: SegmentSpec,
    pub values: Vec<f64>,
}

impl From<FeatureVector> for FeatureRow {
    fn from(v: FeatureVector) -> Self {
        Self {
            speaker_id: v.instance.speaker_id,
            session: v.instance.session,
            gender: v.instance.gender,
            kind: v.instance.kind,
            spec: v.spec,
            values: v.values,
        }
    }
}

const ID_COLUMNS: [&str; 6] = ["speaker_id", "session", "gender", "kind", "part", "scheme"];

/// Rows sharing one column list (the full registry or a subset of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(rows: Vec<FeatureRow>) -> Self {
        Self {
            columns: FeatureRegistry::global().names().to_vec(),
            rows,
        }
    }

    pub fn column_index(&self, name: &str) -> Result<usize, FunctionalsError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| FunctionalsError::UnknownFeature(name.to_string()))
    }

    /// Table restricted to the given columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> FeatureTable {
        FeatureTable {
            columns: columns.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: columns.iter().map(|&c| r.values[c]).collect(),
                    ..r.clone()
                })
                .collect(),
        }
    }

    /// Table without the named columns (missing names are ignored).
    pub fn without(&self, names: &[&str]) -> FeatureTable {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&c| !names.contains(&self.columns[c].as_str()))
            .collect();
        self.select(&keep)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), FunctionalsError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(ID_COLUMNS.iter().copied().chain(self.columns.iter().map(String::as_str)))?;
        for r in &self.rows {
            let mut rec = vec![
                r.speaker_id.clone(),
                r.session.to_string(),
                r.gender.to_string(),
                r.kind.to_string(),
                r.spec.part().to_string(),
                r.spec.scheme().to_string(),
            ];
            rec.extend(r.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureTable, FunctionalsError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < ID_COLUMNS.len() || !ID_COLUMNS.iter().zip(header.iter()).all(|(a, b)| *a == b) {
            return Err(FunctionalsError::HeaderMismatch(format!(
                "expected leading columns {}",
                ID_COLUMNS.join(",")
            )));
        }
        let columns: Vec<String> = header.iter().skip(ID_COLUMNS.len()).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let bad = |message: String| FunctionalsError::Malformed { line, message };
            if rec.len() != header.len() {
                return Err(bad(format!("{} fields, expected {}", rec.len(), header.len())));
            }
            fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize) -> Result<T, String>
            where
                T::Err: std::fmt::Display,
            {
                rec[k].parse().map_err(|e| format!("{}: {e}", ID_COLUMNS[k]))
            }
            let part: Part = parse(&rec, 4).map_err(bad)?;
            let scheme: Scheme = parse(&rec, 5).map_err(bad)?;
            let values = rec
                .iter()
                .skip(ID_COLUMNS.len())
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(FeatureRow {
                speaker_id: rec[0].to_string(),
                session: parse(&rec, 1).map_err(bad)?,
                gender: parse(&rec, 2).map_err(bad)?,
                kind: parse(&rec, 3).map_err(bad)?,
                spec: SegmentSpec::new(part, scheme).map_err(|e| bad(e.to_string()))?,
                values,
            });
        }
        Ok(FeatureTable { columns, rows })
    }
}

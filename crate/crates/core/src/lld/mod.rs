//! Frame-level low-level descriptors (LLDs).
//!
//! Two frame streams share one hop: a 25 ms Hann-windowed spectral stream and
//! a 60 ms periodicity stream centred on the same instants. Voiced-only tracks
//! are `None` on unvoiced frames and on voiced frames where the measure could
//! not be formed (too few periods, fewer than three resonances).

mod formant;
mod pitch;
mod spectral;

use std::io::Write;
use std::path::Path;

use crate::audio::AudioSignal;

pub use formant::{formants, lpc_coefficients, polynomial_roots, FormantError, Formants};
pub use pitch::{
    estimate_f0, hnr_from_correlation, jitter_shimmer, normalized_autocorrelation, period_marks,
    PeriodRegion, PitchTrack,
};
pub use spectral::{SpectralAnalyzer, SpectralFrame};

/// Analysis constants. One record so every run uses identical geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LldConfig {
    pub frame_secs: f64,
    pub hop_secs: f64,
    pub pitch_frame_secs: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    pub silence_dbfs: f64,
    /// Strength bonus per octave towards higher F0 candidates.
    pub octave_cost: f64,
    /// Path cost per octave of F0 change between consecutive frames.
    pub octave_jump_cost: f64,
    pub pre_emphasis: f64,
    pub formant_min_hz: f64,
    pub formant_max_hz: f64,
    pub formant_max_bandwidth: f64,
    pub hnr_floor_db: f64,
    pub hnr_ceiling_db: f64,
    pub h1_a3_halfwidth_hz: f64,
    pub loudness_bands: usize,
    pub loudness_exponent: f64,
}

impl Default for LldConfig {
    fn default() -> Self {
        Self {
            frame_secs: 0.025,
            hop_secs: 0.010,
            pitch_frame_secs: 0.060,
            f0_min: 55.0,
            f0_max: 500.0,
            voicing_threshold: 0.45,
            silence_dbfs: -50.0,
            octave_cost: 0.3,
            octave_jump_cost: 0.35,
            pre_emphasis: 0.97,
            formant_min_hz: 90.0,
            formant_max_hz: 5500.0,
            formant_max_bandwidth: 600.0,
            hnr_floor_db: -20.0,
            hnr_ceiling_db: 40.0,
            h1_a3_halfwidth_hz: 200.0,
            loudness_bands: 26,
            loudness_exponent: 0.33,
        }
    }
}

impl LldConfig {
    /// LPC order `2 + rate/1000`.
    pub fn lpc_order(&self, rate: u32) -> usize {
        2 + (rate / 1000) as usize
    }
}

/// Frame positions for one signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGrid {
    pub frame_len: usize,
    pub hop: usize,
    pub pitch_frame_len: usize,
    pub n_frames: usize,
    pub signal_len: usize,
}

impl FrameGrid {
    pub fn new(config: &LldConfig, rate: u32, signal_len: usize) -> Self {
        let secs = |s: f64| (s * rate as f64).round() as usize;
        let frame_len = secs(config.frame_secs);
        let hop = secs(config.hop_secs);
        let n_frames = if signal_len >= frame_len {
            (signal_len - frame_len) / hop + 1
        } else {
            1
        };
        Self {
            frame_len,
            hop,
            pitch_frame_len: secs(config.pitch_frame_secs),
            n_frames,
            signal_len,
        }
    }

    pub fn frame_start(&self, t: usize) -> usize {
        t * self.hop
    }

    pub fn frame_centre(&self, t: usize) -> usize {
        t * self.hop + self.frame_len / 2
    }

    /// Pitch window for frame `t`, centred on the spectral frame and shifted
    /// inside the signal at the edges.
    pub fn pitch_window(&self, t: usize) -> std::ops::Range<usize> {
        let len = self.pitch_frame_len.min(self.signal_len);
        let centre = self.frame_centre(t);
        let start = centre
            .saturating_sub(len / 2)
            .min(self.signal_len - len);
        start..start + len
    }
}

/// Frame-synchronous descriptor tracks (all of length `n_frames`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LldContours {
    pub hop_secs: f64,
    pub voiced: Vec<bool>,
    pub f0_hz: Vec<Option<f64>>,
    pub jitter_local: Vec<Option<f64>>,
    pub shimmer_local: Vec<Option<f64>>,
    pub hnr_db: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub f2: Vec<Option<f64>>,
    pub f3: Vec<Option<f64>>,
    pub f1_bandwidth: Vec<Option<f64>>,
    pub f2_bandwidth: Vec<Option<f64>>,
    pub f3_bandwidth: Vec<Option<f64>>,
    pub h1_h2_db: Vec<Option<f64>>,
    pub h1_a3_db: Vec<Option<f64>>,
    pub f1_rel_energy_db: Vec<Option<f64>>,
    pub f2_rel_energy_db: Vec<Option<f64>>,
    pub f3_rel_energy_db: Vec<Option<f64>>,
    pub loudness_db: Vec<f64>,
    pub alpha_ratio_db: Vec<f64>,
    pub hammarberg_db: Vec<f64>,
    pub slope_0_500: Vec<f64>,
    pub slope_500_1500: Vec<f64>,
    pub flux: Vec<f64>,
}

impl LldContours {
    pub fn len(&self) -> usize {
        self.voiced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voiced.is_empty()
    }

    /// Voiced-only tracks as `(name, values)`.
    pub fn voiced_tracks(&self) -> [(&'static str, &[Option<f64>]); 15] {
        [
            ("f0", &self.f0_hz),
            ("jitter", &self.jitter_local),
            ("shimmer", &self.shimmer_local),
            ("hnr", &self.hnr_db),
            ("f1", &self.f1),
            ("f2", &self.f2),
            ("f3", &self.f3),
            ("f1_bandwidth", &self.f1_bandwidth),
            ("f2_bandwidth", &self.f2_bandwidth),
            ("f3_bandwidth", &self.f3_bandwidth),
            ("h1_h2", &self.h1_h2_db),
            ("h1_a3", &self.h1_a3_db),
            ("f1_rel_energy", &self.f1_rel_energy_db),
            ("f2_rel_energy", &self.f2_rel_energy_db),
            ("f3_rel_energy", &self.f3_rel_energy_db),
        ]
    }

    /// Tracks defined on every frame as `(name, values)`.
    pub fn spectral_tracks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("loudness", &self.loudness_db),
            ("alpha_ratio", &self.alpha_ratio_db),
            ("hammarberg", &self.hammarberg_db),
            ("slope_0_500", &self.slope_0_500),
            ("slope_500_1500", &self.slope_500_1500),
            ("flux", &self.flux),
        ]
    }

    /// One CSV row per frame; undefined values are empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let voiced = self.voiced_tracks();
        let spectral = self.spectral_tracks();
        write!(out, "frame,time,voiced")?;
        for (name, _) in voiced.iter() {
            write!(out, ",{name}")?;
        }
        for (name, _) in spectral.iter() {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for t in 0..self.len() {
            write!(out, "{t},{:.3},{}", t as f64 * self.hop_secs, self.voiced[t] as u8)?;
            for (_, track) in voiced.iter() {
                match track[t] {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            for (_, track) in spectral.iter() {
                write!(out, ",{}", track[t])?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

/// Runs every descriptor over `signal`.
pub fn extract(signal: &AudioSignal, config: &LldConfig) -> LldContours {
    let rate = signal.sample_rate();
    let grid = FrameGrid::new(config, rate, signal.len());
    let samples = signal.samples();
    let pitch = estimate_f0(signal, &grid, config);
    let regions = period_marks(signal, &pitch, &grid);
    let (jitter_local, shimmer_local) = jitter_shimmer(&regions, &pitch, &grid, rate);

    let n = grid.n_frames;
    let mut c = LldContours {
        hop_secs: grid.hop as f64 / rate as f64,
        voiced: pitch.voiced.clone(),
        f0_hz: pitch.f0_hz.clone(),
        jitter_local,
        shimmer_local,
        hnr_db: pitch
            .correlation
            .iter()
            .map(|r| r.map(|r| hnr_from_correlation(r, config)))
            .collect(),
        ..LldContours::default()
    };

    let analyzer = SpectralAnalyzer::new(config, rate, grid.frame_len);
    let order = config.lpc_order(rate);
    let mut previous: Option<Vec<f64>> = None;
    let mut frame = vec![0.0; grid.frame_len];
    for t in 0..n {
        let start = grid.frame_start(t);
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = samples.get(start + i).copied().unwrap_or(0.0);
        }
        let f0 = pitch.f0_hz[t];
        let fm = if pitch.voiced[t] {
            formants(&frame, rate, order, config).ok()
        } else {
            None
        };
        let spec = analyzer.analyze(&frame, previous.as_deref(), f0, fm.map(|f| f.frequencies));
        c.loudness_db.push(spec.loudness_db);
        c.alpha_ratio_db.push(spec.alpha_ratio_db);
        c.hammarberg_db.push(spec.hammarberg_db);
        c.slope_0_500.push(spec.slope_0_500);
        c.slope_500_1500.push(spec.slope_500_1500);
        c.flux.push(spec.flux);
        c.h1_h2_db.push(spec.h1_h2_db);
        c.h1_a3_db.push(spec.h1_a3_db);
        c.f1_rel_energy_db.push(spec.formant_rel_db[0]);
        c.f2_rel_energy_db.push(spec.formant_rel_db[1]);
        c.f3_rel_energy_db.push(spec.formant_rel_db[2]);
        let fget = |k: usize, bw: bool| {
            fm.map(|f| if bw { f.bandwidths[k] } else { f.frequencies[k] })
        };
        c.f1.push(fget(0, false));
        c.f2.push(fget(1, false));
        c.f3.push(fget(2, false));
        c.f1_bandwidth.push(fget(0, true));
        c.f2_bandwidth.push(fget(1, true));
        c.f3_bandwidth.push(fget(2, true));
        previous = Some(spec.normalized_magnitude);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let cfg = LldConfig::default();
        let g = FrameGrid::new(&cfg, 16_000, 16_000);
        assert_eq!(g.frame_len, 400);
        assert_eq!(g.hop, 160);
        assert_eq!(g.pitch_frame_len, 960);
        assert_eq!(g.n_frames, (16_000 - 400) / 160 + 1);
        assert_eq!(g.pitch_window(0), 0..960);
        assert_eq!(g.pitch_window(g.n_frames - 1).end, 16_000);
        let tiny = FrameGrid::new(&cfg, 16_000, 100);
        assert_eq!(tiny.n_frames, 1);
        assert_eq!(tiny.pitch_window(0), 0..100);
        assert_eq!(cfg.lpc_order(16_000), 18);
    }

    #[test]
    fn tracks_are_aligned_and_finite() {
        let rate = 16_000;
        let n = rate as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                let gate = if (0.3..0.7).contains(&t) { 0.0 } else { 1.0 };
                gate * 0.4 * (2.0 * std::f64::consts::PI * 150.0 * t).sin()
            })
            .collect();
        let c = extract(&AudioSignal::new(samples, rate).unwrap(), &LldConfig::default());
        let n = c.len();
        for (name, track) in c.voiced_tracks() {
            assert_eq!(track.len(), n, "{name}");
            for (t, v) in track.iter().enumerate() {
                if let Some(v) = v {
                    assert!(v.is_finite(), "{name}[{t}]");
                    assert!(c.voiced[t], "{name} defined on unvoiced frame {t}");
                }
            }
        }
        for (t, v) in c.f0_hz.iter().enumerate() {
            assert_eq!(v.is_some(), c.voiced[t]);
        }
        for (t, v) in c.hnr_db.iter().enumerate() {
            assert_eq!(v.is_some(), c.voiced[t]);
        }
        for (name, track) in c.spectral_tracks() {
            assert_eq!(track.len(), n, "{name}");
            assert!(track.iter().all(|v| v.is_finite()), "{name}");
        }
        assert!(c.voiced.iter().any(|&v| v));
        assert!(c.voiced.iter().any(|&v| !v));
    }

    #[test]
    fn silence_is_finite_and_unvoiced() {
        let c = extract(
            &AudioSignal::new(vec![0.0; 8_000], 16_000).unwrap(),
            &LldConfig::default(),
        );
        assert!(c.voiced.iter().all(|&v| !v));
        for (_, track) in c.spectral_tracks() {
            assert!(track.iter().all(|v| v.is_finite()));
        }
    }
}

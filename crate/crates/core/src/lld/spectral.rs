//! Short-time spectral descriptors on Hann-windowed frames.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::LldConfig;

/// Absolute power floor; the effective floor is also relative to the frame's
/// mean bin power so level-independent descriptors stay level independent.
const POWER_FLOOR: f64 = 1e-20;
const RELATIVE_FLOOR: f64 = 1e-12;
const FLUX_MAX_HZ: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub loudness_db: f64,
    pub alpha_ratio_db: f64,
    pub hammarberg_db: f64,
    /// dB per Hz.
    pub slope_0_500: f64,
    pub slope_500_1500: f64,
    pub flux: f64,
    pub h1_h2_db: Option<f64>,
    pub h1_a3_db: Option<f64>,
    /// Level of the harmonic nearest each formant relative to H1 (dB).
    pub formant_rel_db: [Option<f64>; 3],
    /// Unit-norm magnitude spectrum up to 5 kHz, kept for the next frame's flux.
    pub normalized_magnitude: Vec<f64>,
}

struct Band {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Precomputed FFT plan, window and filterbank for one frame geometry.
pub struct SpectralAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    window: Vec<f64>,
    power_scale: f64,
    bin_hz: f64,
    bands: Vec<Band>,
    loudness_exponent: f64,
    h1_a3_halfwidth: f64,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl SpectralAnalyzer {
    pub fn new(cfg: &LldConfig, rate: u32, frame_len: usize) -> Self {
        let fft_size = frame_len.next_power_of_two();
        let window: Vec<f64> = (0..frame_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / frame_len as f64).cos())
            .collect();
        let wsum: f64 = window.iter().sum();
        let bin_hz = rate as f64 / fft_size as f64;

        let (lo, hi) = (hz_to_mel(50.0), hz_to_mel(5000.0));
        let n_bands = cfg.loudness_bands;
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_bands + 1) as f64))
            .collect();
        let bands = (0..n_bands)
            .map(|b| {
                let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
                let first_bin = (l / bin_hz).ceil() as usize;
                let last_bin = (r / bin_hz).floor() as usize;
                let weights = (first_bin..=last_bin)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                        .max(0.0)
                    })
                    .collect();
                Band { first_bin, weights }
            })
            .collect();

        Self {
            fft: FftPlanner::new().plan_fft_forward(fft_size),
            fft_size,
            window,
            power_scale: 1.0 / (wsum * wsum),
            bin_hz,
            bands,
            loudness_exponent: cfg.loudness_exponent,
            h1_a3_halfwidth: cfg.h1_a3_halfwidth_hz,
        }
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    /// Power spectrum (bins `0..=N/2`) of one frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for ((slot, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            slot.re = x * w;
        }
        self.fft.process(&mut buf);
        buf[..=self.fft_size / 2]
            .iter()
            .map(|c| c.norm_sqr() * self.power_scale)
            .collect()
    }

    fn bins(&self, lo_hz: f64, hi_hz: f64, n_bins: usize) -> std::ops::RangeInclusive<usize> {
        let lo = (lo_hz / self.bin_hz).ceil().max(0.0) as usize;
        let hi = ((hi_hz / self.bin_hz).floor() as usize).min(n_bins - 1);
        lo..=hi
    }

    fn band_sum(&self, p: &[f64], lo: f64, hi: f64) -> f64 {
        let r = self.bins(lo, hi, p.len());
        p[r].iter().sum()
    }

    fn band_max(&self, p: &[f64], lo: f64, hi: f64) -> Option<f64> {
        let r = self.bins(lo, hi, p.len());
        if r.is_empty() {
            return None;
        }
        p[r].iter().copied().reduce(f64::max)
    }

    fn slope(&self, p: &[f64], lo: f64, hi: f64, floor: f64) -> f64 {
        let r = self.bins(lo, hi, p.len());
        let pts: Vec<(f64, f64)> = r
            .map(|k| (k as f64 * self.bin_hz, 10.0 * (p[k] + floor).log10()))
            .collect();
        let n = pts.len() as f64;
        if pts.len() < 2 {
            return 0.0;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn analyze(
        &self,
        frame: &[f64],
        previous: Option<&[f64]>,
        f0: Option<f64>,
        formants: Option<[f64; 3]>,
    ) -> SpectralFrame {
        let p = self.power_spectrum(frame);
        let floor = (RELATIVE_FLOOR * p.iter().sum::<f64>() / p.len() as f64).max(POWER_FLOOR);
        let db = |v: f64| 10.0 * (v + floor).log10();

        let alpha_ratio_db = db(self.band_sum(&p, 1000.0, 5000.0)) - db(self.band_sum(&p, 50.0, 1000.0 - 1e-9));
        let hammarberg_db = db(self.band_max(&p, 0.0, 2000.0).unwrap_or(0.0))
            - db(self.band_max(&p, 2000.0 + 1e-9, 5000.0).unwrap_or(0.0));

        let compressed: f64 = self
            .bands
            .iter()
            .map(|b| {
                let e: f64 = b
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * p.get(b.first_bin + i).copied().unwrap_or(0.0))
                    .sum();
                e.powf(self.loudness_exponent)
            })
            .sum();
        let loudness_db = db(compressed);

        let flux_bins = self.bins(0.0, FLUX_MAX_HZ, p.len());
        let mut magnitude: Vec<f64> = p[flux_bins].iter().map(|v| v.sqrt()).collect();
        let norm = magnitude.iter().map(|m| m * m).sum::<f64>().sqrt();
        if norm > 1e-15 {
            magnitude.iter_mut().for_each(|m| *m /= norm);
        } else {
            magnitude.iter_mut().for_each(|m| *m = 0.0);
        }
        let flux = previous
            .map(|prev| prev.iter().zip(&magnitude).map(|(a, b)| (b - a).powi(2)).sum())
            .unwrap_or(0.0);

        let h1 = f0.and_then(|f| self.band_max(&p, 0.75 * f, 1.25 * f));
        let h2 = f0.and_then(|f| self.band_max(&p, 1.75 * f, 2.25 * f));
        let a3 = formants.and_then(|f| self.band_max(&p, f[2] - self.h1_a3_halfwidth, f[2] + self.h1_a3_halfwidth));
        let formant_rel_db = match (f0, formants, h1) {
            (Some(f0), Some(fm), Some(h1)) => fm.map(|f| {
                let k = (f / f0).round().max(1.0);
                self.band_max(&p, (k - 0.25) * f0, (k + 0.25) * f0).map(|a| db(a) - db(h1))
            }),
            _ => [None; 3],
        };
        SpectralFrame {
            loudness_db,
            alpha_ratio_db,
            hammarberg_db,
            slope_0_500: self.slope(&p, 0.0, 500.0, floor),
            slope_500_1500: self.slope(&p, 500.0, 1500.0, floor),
            flux,
            h1_h2_db: h1.zip(h2).map(|(a, b)| db(a) - db(b)),
            h1_a3_db: h1.zip(a3).map(|(a, b)| db(a) - db(b)),
            formant_rel_db,
            normalized_magnitude: magnitude,
        }
    }
}

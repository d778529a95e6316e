//! Periodicity analysis: F0 and voicing, glottal period marks, jitter,
//! shimmer and HNR.

use std::f64::consts::PI;

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{FrameGrid, LldConfig};
use crate::audio::AudioSignal;

/// Per-frame F0 and voicing. `correlation` is the normalized autocorrelation
/// at the selected period lag (voiced frames only).
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub f0_hz: Vec<Option<f64>>,
    pub voiced: Vec<bool>,
    pub correlation: Vec<Option<f64>>,
}

/// Period marks of one voiced region, in seconds, with the waveform peak
/// amplitude at each mark.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeriodRegion {
    pub marks: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl PeriodRegion {
    pub fn periods(&self) -> Vec<f64> {
        self.marks.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

struct Autocorrelator {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    prefix: Vec<f64>,
}

impl Autocorrelator {
    fn new(frame_len: usize, max_lag: usize) -> Self {
        let size = (frame_len + max_lag + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
            buf: vec![Complex::new(0.0, 0.0); size],
            prefix: Vec::new(),
        }
    }

    /// `r[τ] = Σ x[n]x[n+τ] / sqrt(Σ x[n]² · Σ x[n+τ]²)` over the overlap,
    /// for τ in `0..=max_lag`.
    fn compute(&mut self, frame: &[f64], max_lag: usize, out: &mut Vec<f64>) {
        let n = frame.len();
        self.buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (slot, &x) in self.buf.iter_mut().zip(frame) {
            slot.re = x;
        }
        self.forward.process(&mut self.buf);
        for c in self.buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.inverse.process(&mut self.buf);
        self.prefix.clear();
        self.prefix.push(0.0);
        let mut acc = 0.0;
        for &x in frame {
            acc += x * x;
            self.prefix.push(acc);
        }
        let total = acc;
        let scale = 1.0 / self.size as f64;
        out.clear();
        for lag in 0..=max_lag.min(n.saturating_sub(1)) {
            let head = self.prefix[n - lag];
            let tail = total - self.prefix[lag];
            let denom = (head * tail).sqrt();
            let num = self.buf[lag].re * scale;
            out.push(if denom > 1e-20 { (num / denom).clamp(-1.0, 1.0) } else { 0.0 });
        }
    }
}

/// Normalized autocorrelation of `frame` for lags `0..=max_lag`.
pub fn normalized_autocorrelation(frame: &[f64], max_lag: usize) -> Vec<f64> {
    let mut ac = Autocorrelator::new(frame.len(), max_lag);
    let mut out = Vec::new();
    ac.compute(frame, max_lag, &mut out);
    out
}

/// Vertex of the parabola through three equally spaced points: (offset, value).
fn parabolic_peak(left: f64, centre: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * centre + right;
    if denom.abs() < 1e-300 {
        return (0.0, centre);
    }
    let delta = (0.5 * (left - right) / denom).clamp(-0.5, 0.5);
    (delta, centre - 0.25 * (left - right) * delta)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    lag: f64,
    r: f64,
    strength: f64,
}

const MAX_CANDIDATES: usize = 8;

fn candidates(r: &[f64], min_lag: usize, max_lag: usize, rate: f64, cfg: &LldConfig) -> Vec<Candidate> {
    let mut out = Vec::new();
    let hi = max_lag.min(r.len().saturating_sub(2));
    for lag in min_lag.max(1)..=hi {
        let (l, c, rr) = (r[lag - 1], r[lag], r[lag + 1]);
        if c > 0.0 && c >= l && c > rr {
            let (delta, peak) = parabolic_peak(l, c, rr);
            let peak = peak.min(1.0);
            let lag_f = lag as f64 + delta;
            let f0 = rate / lag_f;
            out.push(Candidate {
                lag: lag_f,
                r: peak,
                strength: peak + cfg.octave_cost * (f0 / cfg.f0_min).log2(),
            });
        }
    }
    out.sort_by(|a, b| b.r.total_cmp(&a.r));
    out.truncate(MAX_CANDIDATES);
    out
}

/// F0 by normalized autocorrelation on the 60 ms periodicity frames.
///
/// A frame is voiced when its strongest in-range autocorrelation peak reaches
/// the voicing threshold and its RMS level is above the silence gate. Within
/// each voiced run the F0 path minimizes `-strength` plus a penalty
/// proportional to `|log2(f_t / f_{t-1})|`.
pub fn estimate_f0(signal: &AudioSignal, grid: &FrameGrid, cfg: &LldConfig) -> PitchTrack {
    let rate = signal.sample_rate() as f64;
    let samples = signal.samples();
    let min_lag = (rate / cfg.f0_max).floor() as usize;
    let max_lag = (rate / cfg.f0_min).ceil() as usize;
    let n = grid.n_frames;
    let win_len = grid.pitch_frame_len.min(grid.signal_len);
    let usable_max = max_lag.min(win_len / 2);
    let mut ac = Autocorrelator::new(win_len, usable_max + 1);
    let mut r = Vec::new();
    let mut frame = Vec::with_capacity(win_len);

    let mut voiced = vec![false; n];
    let mut cands: Vec<Vec<Candidate>> = vec![Vec::new(); n];
    for t in 0..n {
        let w = grid.pitch_window(t);
        let slice = &samples[w];
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        frame.clear();
        frame.extend(slice.iter().map(|x| x - mean));
        let rms = (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt();
        let level_db = 20.0 * rms.max(1e-12).log10();
        if level_db < cfg.silence_dbfs || usable_max <= min_lag + 1 {
            continue;
        }
        ac.compute(&frame, usable_max + 1, &mut r);
        let c = candidates(&r, min_lag, usable_max, rate, cfg);
        if c.first().is_some_and(|best| best.r >= cfg.voicing_threshold) {
            voiced[t] = true;
            cands[t] = c;
        }
    }

    let mut f0_hz = vec![None; n];
    let mut correlation = vec![None; n];
    let mut t = 0;
    while t < n {
        if !voiced[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && voiced[t] {
            t += 1;
        }
        for (k, c) in viterbi(&cands[start..t], cfg).into_iter().enumerate() {
            f0_hz[start + k] = Some(rate / c.lag);
            correlation[start + k] = Some(c.r);
        }
    }
    PitchTrack {
        f0_hz,
        voiced,
        correlation,
    }
}

fn viterbi(frames: &[Vec<Candidate>], cfg: &LldConfig) -> Vec<Candidate> {
    let mut cost: Vec<f64> = frames[0].iter().map(|c| -c.strength).collect();
    let mut back: Vec<Vec<usize>> = vec![vec![0; frames[0].len()]];
    for t in 1..frames.len() {
        let mut next = Vec::with_capacity(frames[t].len());
        let mut ptr = Vec::with_capacity(frames[t].len());
        for cur in &frames[t] {
            let (best_j, best) = frames[t - 1]
                .iter()
                .enumerate()
                .map(|(j, prev)| {
                    let jump = (prev.lag / cur.lag).log2().abs();
                    (j, cost[j] + cfg.octave_jump_cost * jump)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("voiced frames have candidates");
            next.push(best - cur.strength);
            ptr.push(best_j);
        }
        cost = next;
        back.push(ptr);
    }
    let mut idx = cost
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut path = vec![frames[0][0]; frames.len()];
    for t in (0..frames.len()).rev() {
        path[t] = frames[t][idx];
        idx = back[t][idx];
    }
    path
}

/// HNR in dB from a normalized autocorrelation value, clamped to the
/// configured range.
pub fn hnr_from_correlation(r: f64, cfg: &LldConfig) -> f64 {
    if r >= 1.0 {
        return cfg.hnr_ceiling_db;
    }
    if r <= 0.0 {
        return cfg.hnr_floor_db;
    }
    (10.0 * (r / (1.0 - r)).log10()).clamp(cfg.hnr_floor_db, cfg.hnr_ceiling_db)
}

/// `2ab / (aa + bb)`: like a normalized correlation but also penalizes an
/// energy mismatch, so a near-silent window never matches a loud one.
fn similarity(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let d = aa + bb;
    if d > 1e-20 {
        2.0 * ab / d
    } else {
        0.0
    }
}

/// Lag in `lo..=hi` (samples) that best aligns the window at `base` with the
/// one at `base + dir*lag`, refined to sub-sample precision.
fn best_alignment(
    y: &[f64],
    base: usize,
    lo: usize,
    hi: usize,
    win: usize,
    forward: bool,
) -> Option<(f64, f64)> {
    let reference = &y[base..base + win];
    let score = |lag: usize| -> Option<f64> {
        let start = if forward { base + lag } else { base.checked_sub(lag)? };
        let end = start + win;
        (end <= y.len()).then(|| similarity(reference, &y[start..end]))
    };
    let mut best: Option<(usize, f64)> = None;
    for lag in lo..=hi {
        if let Some(s) = score(lag) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((lag, s));
            }
        }
    }
    let (lag, s) = best?;
    let left = if lag > lo { score(lag - 1) } else { None };
    let right = if lag < hi { score(lag + 1) } else { None };
    let (delta, peak) = match (left, right) {
        (Some(l), Some(r)) => parabolic_peak(l, s, r),
        _ => (0.0, s),
    };
    Some((lag as f64 + delta, peak))
}

/// Band-limited (Hann-windowed sinc) interpolation of `y` at fractional `t`.
fn interpolate(y: &[f64], t: f64) -> f64 {
    const HALF: i64 = 8;
    let c = t.floor() as i64;
    let mut acc = 0.0;
    for k in (c - HALF + 1)..=(c + HALF) {
        if k < 0 || k as usize >= y.len() {
            continue;
        }
        let d = t - k as f64;
        let w = 0.5 + 0.5 * (PI * d / (HALF as f64 + 1.0)).cos();
        let sinc = if d.abs() < 1e-12 { 1.0 } else { (PI * d).sin() / (PI * d) };
        acc += y[k as usize] * sinc * w;
    }
    acc
}

/// Largest sample within `centre ± halfwidth`, refined on the band-limited
/// interpolant: `(position, value)`.
fn local_peak(y: &[f64], centre: f64, halfwidth: f64) -> (f64, f64) {
    let lo = (centre - halfwidth).floor().max(0.0) as usize;
    let hi = ((centre + halfwidth).ceil().max(0.0) as usize).min(y.len() - 1);
    let lo = lo.min(hi);
    let (i, v) = (lo..=hi)
        .map(|i| (i, y[i]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((lo, y[lo]));
    if i == 0 || i + 1 >= y.len() {
        return (i as f64, v);
    }
    const STEPS: usize = 32;
    let grid: Vec<f64> = (0..=2 * STEPS)
        .map(|k| interpolate(y, i as f64 - 1.0 + k as f64 / STEPS as f64))
        .collect();
    let k = (1..2 * STEPS)
        .max_by(|&a, &b| grid[a].total_cmp(&grid[b]))
        .unwrap_or(STEPS);
    let (d, p) = parabolic_peak(grid[k - 1], grid[k], grid[k + 1]);
    let pos = i as f64 - 1.0 + (k as f64 + d) / STEPS as f64;
    if p >= v {
        (pos, p)
    } else {
        (i as f64, v)
    }
}

/// Glottal period marks for every voiced run of `pitch`.
///
/// Each region is anchored at its largest waveform peak; successive marks are
/// placed one local period away (period taken from the F0 track), at the lag
/// that best aligns the waveform following the previous mark.
pub fn period_marks(signal: &AudioSignal, pitch: &PitchTrack, grid: &FrameGrid) -> Vec<PeriodRegion> {
    let rate = signal.sample_rate() as f64;
    let x = signal.samples();
    let mut regions = Vec::new();
    let n = pitch.voiced.len();
    let mut t = 0;
    while t < n {
        if !pitch.voiced[t] {
            t += 1;
            continue;
        }
        let first = t;
        while t < n && pitch.voiced[t] {
            t += 1;
        }
        let last = t - 1;
        let span = grid.pitch_window(first).start..grid.pitch_window(last).end;
        let region = marks_in_span(x, span, rate, |pos| {
            let frame = ((pos - grid.frame_len as f64 / 2.0) / grid.hop as f64).round();
            let frame = (frame.max(first as f64) as usize).min(last);
            rate / pitch.f0_hz[frame].expect("voiced frames carry F0")
        });
        if region.marks.len() >= 2 {
            regions.push(region);
        }
    }
    regions
}

fn marks_in_span(
    x: &[f64],
    span: std::ops::Range<usize>,
    rate: f64,
    period_at: impl Fn(f64) -> f64,
) -> PeriodRegion {
    let seg = &x[span.clone()];
    let (max, min) = seg
        .iter()
        .fold((f64::MIN, f64::MAX), |(hi, lo), &v| (hi.max(v), lo.min(v)));
    let sign = if max >= -min { 1.0 } else { -1.0 };
    let y: Vec<f64> = seg.iter().map(|v| sign * v).collect();
    let len = y.len();
    // search the middle half so the anchor's alignment window fits
    let (qlo, qhi) = (len / 4, (3 * len / 4).max(len / 4 + 1));
    let anchor = qlo
        + y[qlo..qhi]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
    let anchor = if anchor > 0 && anchor + 1 < len {
        anchor as f64 + parabolic_peak(y[anchor - 1], y[anchor], y[anchor + 1]).0
    } else {
        anchor as f64
    };

    const MIN_SIMILARITY: f64 = 0.3;
    let offset = span.start as f64;
    let mut marks = vec![(anchor, local_peak(&y, anchor, 0.0).1)];
    for forward in [true, false] {
        let mut m = anchor;
        loop {
            let period = period_at(m + offset);
            let base = m.round() as usize;
            let win = (0.75 * period) as usize;
            if base + win > len {
                break;
            }
            let lo = (0.8 * period).floor() as usize;
            let hi = (1.2 * period).ceil() as usize;
            match best_alignment(&y, base, lo, hi, win, forward) {
                Some((lag, sim)) if sim >= MIN_SIMILARITY => {
                    let predicted = if forward { m + lag } else { m - lag };
                    // snap to the waveform peak so rounding errors cannot drift
                    let (pos, amp) = local_peak(&y, predicted, 0.1 * period);
                    if (forward && pos <= m + 0.5 * period) || (!forward && pos >= m - 0.5 * period) {
                        break;
                    }
                    m = pos;
                    marks.push((m, amp));
                }
                _ => break,
            }
        }
    }
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));
    PeriodRegion {
        marks: marks.iter().map(|(m, _)| (m + offset) / rate).collect(),
        amplitudes: marks.iter().map(|&(_, a)| a).collect(),
    }
}

/// Local jitter and shimmer per frame, from the periods whose marks both fall
/// inside the frame's periodicity window. Frames with fewer than three such
/// periods stay undefined.
pub fn jitter_shimmer(
    regions: &[PeriodRegion],
    pitch: &PitchTrack,
    grid: &FrameGrid,
    rate: u32,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let n = pitch.voiced.len();
    let mut jitter = vec![None; n];
    let mut shimmer = vec![None; n];
    let rate = rate as f64;
    for t in (0..n).filter(|&t| pitch.voiced[t]) {
        let w = grid.pitch_window(t);
        let (ws, we) = (w.start as f64 / rate, w.end as f64 / rate);
        for region in regions {
            let inside: Vec<usize> = (0..region.marks.len())
                .filter(|&i| region.marks[i] >= ws && region.marks[i] <= we)
                .collect();
            if inside.len() < 4 {
                continue;
            }
            let (a, b) = (inside[0], *inside.last().unwrap());
            let periods: Vec<f64> = (a..b).map(|i| region.marks[i + 1] - region.marks[i]).collect();
            let amps = &region.amplitudes[a..b];
            jitter[t] = Some(local_perturbation(&periods));
            shimmer[t] = Some(local_perturbation(amps));
            break;
        }
    }
    (jitter, shimmer)
}

/// `mean |v_i - v_{i-1}| / mean |v|`.
fn local_perturbation(values: &[f64]) -> f64 {
    let mean = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    if mean <= 1e-12 {
        return 0.0;
    }
    let diffs = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
    diffs / (values.len() - 1) as f64 / mean
}

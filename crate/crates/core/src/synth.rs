//! Source-filter voice synthesis and synthetic cohorts with planted
//! pre/post-treatment effects.
//!
//! The source is a band-limited pulse train with per-cycle period and
//! amplitude perturbation, low-passed twice (-12 dB/oct). It feeds a cascade
//! of three second-order resonators; white aspiration noise is mixed at the
//! requested harmonic-to-noise ratio and a dB-linear loudness ramp shapes the
//! onset and offset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{
    write_wav, AudioError, AudioSignal, CohortManifest, Gender, Instance, InstanceKind,
    ManifestError, Session, Vowel, CANONICAL_RATE, PHRASES_PER_SESSION,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid voice parameters: {0}")]
    InvalidParams(String),
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Perturbation {
    /// Independent Gaussian deviations with σ = the given percentage.
    #[default]
    Gaussian,
    /// Deterministic ±percentage, alternating cycle by cycle.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
}

const fn res(freq_hz: f64, bandwidth_hz: f64) -> Resonance {
    Resonance {
        freq_hz,
        bandwidth_hz,
    }
}

/// Formant template (adult male) for a cardinal vowel.
pub fn vowel_formants(v: Vowel) -> [Resonance; 3] {
    match v {
        Vowel::A => [res(700.0, 80.0), res(1220.0, 100.0), res(2600.0, 120.0)],
        Vowel::E => [res(400.0, 70.0), res(2050.0, 100.0), res(2700.0, 120.0)],
        Vowel::I => [res(290.0, 60.0), res(2250.0, 100.0), res(3000.0, 120.0)],
        Vowel::O => [res(450.0, 70.0), res(850.0, 80.0), res(2500.0, 120.0)],
        Vowel::U => [res(320.0, 60.0), res(800.0, 80.0), res(2300.0, 120.0)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceParams {
    pub f0_hz: f64,
    pub duration_s: f64,
    pub jitter_pct: f64,
    pub shimmer_pct: f64,
    #[serde(default)]
    pub perturbation: Perturbation,
    pub hnr_db: f64,
    pub formants: [Resonance; 3],
    /// Depth (percent) of slow random formant-frequency modulation.
    #[serde(default)]
    pub wobble_pct: f64,
    /// Slope of the dB-linear onset/offset ramp; 0 disables the ramp.
    pub loudness_onset_slope_db_s: f64,
    pub seed: u64,
}

impl VoiceParams {
    /// Steady /a/ at 120 Hz with no perturbation and 40 dB HNR.
    pub fn clean(duration_s: f64) -> Self {
        Self {
            f0_hz: 120.0,
            duration_s,
            jitter_pct: 0.0,
            shimmer_pct: 0.0,
            perturbation: Perturbation::Gaussian,
            hnr_db: 40.0,
            formants: vowel_formants(Vowel::A),
            wobble_pct: 0.0,
            loudness_onset_slope_db_s: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if !(55.0..=500.0).contains(&self.f0_hz) {
            return bad(format!("f0 {} Hz outside [55, 500]", self.f0_hz));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} s must be positive", self.duration_s));
        }
        for (name, v) in [("jitter", self.jitter_pct), ("shimmer", self.shimmer_pct)] {
            if !(0.0..=20.0).contains(&v) {
                return bad(format!("{name} {v}% outside [0, 20]"));
            }
        }
        if !self.hnr_db.is_finite() || !(0.0..=20.0).contains(&self.wobble_pct) {
            return bad("hnr must be finite and wobble within [0, 20]%".into());
        }
        if self.loudness_onset_slope_db_s < 0.0 {
            return bad("loudness slope must be non-negative".into());
        }
        let f = &self.formants;
        if !(f[0].freq_hz < f[1].freq_hz && f[1].freq_hz < f[2].freq_hz)
            || f.iter().any(|r| r.freq_hz <= 0.0 || r.bandwidth_hz <= 0.0)
            || f[2].freq_hz >= CANONICAL_RATE as f64 / 2.0
        {
            return bad("formants must be positive, ascending and below Nyquist".into());
        }
        Ok(())
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

const PULSE_HALF_WIDTH: i64 = 16;
const RAMP_DEPTH_DB: f64 = 40.0;
const GLOTTAL_CUTOFF_HZ: f64 = 100.0;

/// Adds a band-limited impulse of height `amp` at fractional sample `pos`.
fn add_pulse(buf: &mut [f64], pos: f64, amp: f64) {
    let centre = pos.round() as i64;
    let hw = PULSE_HALF_WIDTH as f64 + 1.0;
    for k in (centre - PULSE_HALF_WIDTH)..=(centre + PULSE_HALF_WIDTH) {
        if k < 0 || k as usize >= buf.len() {
            continue;
        }
        let d = k as f64 - pos;
        let w = 0.5 + 0.5 * (PI * d / hw).cos();
        buf[k as usize] += amp * sinc(d) * w;
    }
}

/// Planned glottal cycles: onset times (seconds) and amplitudes.
pub fn glottal_cycles(params: &VoiceParams) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let period = 1.0 / params.f0_hz;
    let (dj, ds) = (params.jitter_pct / 100.0, params.shimmer_pct / 100.0);
    let mut times = Vec::new();
    let mut amps = Vec::new();
    let mut t = 0.25 * period;
    let mut k = 0usize;
    while t < params.duration_s {
        let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let (pj, ps) = match params.perturbation {
            Perturbation::Alternating => (sign * dj, sign * ds),
            Perturbation::Gaussian => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                ((a * dj).clamp(-0.5, 0.5), (b * ds).clamp(-0.9, 0.9))
            }
        };
        times.push(t);
        amps.push(1.0 + ps);
        t += period * (1.0 + pj);
        k += 1;
    }
    (times, amps)
}

struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn coefficients(freq: f64, bw: f64, rate: f64) -> (f64, f64, f64) {
        let c = -(-2.0 * PI * bw / rate).exp();
        let b = 2.0 * (-PI * bw / rate).exp() * (2.0 * PI * freq / rate).cos();
        (1.0 - b - c, b, c)
    }

    fn step(&mut self, x: f64, (a, b, c): (f64, f64, f64)) -> f64 {
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Smooth zero-mean, unit-RMS modulation built from a few slow sinusoids.
fn modulation(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let parts: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(2.0..8.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let norm = (2.0 / parts.len() as f64).sqrt();
    move |t| norm * parts.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
}

fn render(params: &VoiceParams) -> Result<Vec<f64>, SynthError> {
    params.validate()?;
    let rate = CANONICAL_RATE as f64;
    let n = (params.duration_s * rate).round().max(1.0) as usize;
    let (times, amps) = glottal_cycles(params);
    let mut source = vec![0.0; n];
    for (&t, &a) in times.iter().zip(&amps) {
        add_pulse(&mut source, t * rate, a);
    }

    let lp = (-2.0 * PI * GLOTTAL_CUTOFF_HZ / rate).exp();
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in source.iter_mut() {
        s1 = (1.0 - lp) * *v + lp * s1;
        s2 = (1.0 - lp) * s1 + lp * s2;
        *v = s2;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_f0a1);
    let mods: Vec<_> = (0..3).map(|_| modulation(&mut rng)).collect();
    let depth = params.wobble_pct / 100.0;
    const BLOCK: usize = 32;
    let schedule: Vec<Vec<(f64, f64, f64)>> = (0..n.div_ceil(BLOCK))
        .map(|b| {
            let t = (b * BLOCK) as f64 / rate;
            params
                .formants
                .iter()
                .zip(&mods)
                .map(|(f, m)| {
                    let freq = f.freq_hz * (1.0 + depth * m(t)).max(0.5);
                    Resonator::coefficients(freq, f.bandwidth_hz, rate)
                })
                .collect()
        })
        .collect();
    let filter = |mut x: Vec<f64>| {
        let mut resonators: Vec<Resonator> = (0..3).map(|_| Resonator { y1: 0.0, y2: 0.0 }).collect();
        for (b, coefs) in schedule.iter().enumerate() {
            let start = b * BLOCK;
            for v in x[start..(start + BLOCK).min(n)].iter_mut() {
                let mut y = *v;
                for (r, &c) in resonators.iter_mut().zip(coefs) {
                    y = r.step(y, c);
                }
                *v = y;
            }
        }
        x
    };
    let mut voiced = filter(source);

    // aspiration noise shares the vocal tract; its level is set on the output
    // so the harmonic-to-noise ratio holds where it is measured
    let noise = {
        let d = Normal::new(0.0, 1.0).expect("unit sd");
        filter((0..n).map(|_| d.sample(&mut rng)).collect())
    };
    let variance = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / n as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
    };
    let (pv, pn) = (variance(&voiced), variance(&noise));
    if pn > 0.0 {
        let gain = (pv / pn / 10f64.powf(params.hnr_db / 10.0)).sqrt();
        for (v, e) in voiced.iter_mut().zip(&noise) {
            *v += gain * e;
        }
    }

    if params.loudness_onset_slope_db_s > 0.0 {
        let slope = params.loudness_onset_slope_db_s;
        let dur = n as f64 / rate;
        for (i, v) in voiced.iter_mut().enumerate() {
            let t = i as f64 / rate;
            let db = (-RAMP_DEPTH_DB + slope * t)
                .min(-RAMP_DEPTH_DB + slope * (dur - t))
                .min(0.0);
            *v *= 10f64.powf(db / 20.0);
        }
    }
    Ok(voiced)
}

fn normalize_peak(mut x: Vec<f64>, peak: f64) -> Vec<f64> {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Synthesizes a sustained vowel at the canonical rate, peak-normalized to 0.7.
pub fn synth_vowel(params: &VoiceParams) -> Result<AudioSignal, SynthError> {
    let x = normalize_peak(render(params)?, 0.7);
    Ok(AudioSignal::new(x, CANONICAL_RATE)?)
}

/// A pseudo-phrase: a chain of short syllables on random vowels with falling
/// F0 and short pauses, using the voice quality of `base`.
pub fn synth_phrase(base: &VoiceParams, seed: u64) -> Result<AudioSignal, SynthError> {
    base.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = CANONICAL_RATE as f64;
    let n_syllables = rng.random_range(3..=6);
    let scale = base.formants[0].freq_hz / vowel_formants(Vowel::A)[0].freq_hz;
    let mut out = Vec::new();
    let pause = |rng: &mut ChaCha8Rng| vec![0.0; (rng.random_range(0.05..0.15) * rate) as usize];
    out.extend(pause(&mut rng));
    for k in 0..n_syllables {
        let vowel = Vowel::ALL[rng.random_range(0..5)];
        let progress = k as f64 / (n_syllables - 1).max(1) as f64;
        let formants = vowel_formants(vowel).map(|r| Resonance {
            freq_hz: r.freq_hz * scale,
            bandwidth_hz: r.bandwidth_hz,
        });
        let syl = VoiceParams {
            f0_hz: (base.f0_hz * (1.1 - 0.2 * progress)).clamp(55.0, 500.0),
            duration_s: rng.random_range(0.15..0.30),
            formants,
            loudness_onset_slope_db_s: base.loudness_onset_slope_db_s.max(50.0) * 3.0,
            seed: rng.random(),
            ..base.clone()
        };
        out.extend(render(&syl)?);
        out.extend(pause(&mut rng));
    }
    Ok(AudioSignal::new(normalize_peak(out, 0.7), CANONICAL_RATE)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectSize {
    Null,
    Moderate,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

const fn g(mean: f64, sd: f64) -> Gaussian {
    Gaussian { mean, sd }
}

/// Distribution of the planted voice parameters for one treatment state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub duration_s: Gaussian,
    pub jitter_pct: Gaussian,
    pub shimmer_pct: Gaussian,
    pub hnr_db: Gaussian,
    /// Formant modulation depth; drives spectral flux.
    pub wobble_pct: Gaussian,
    pub loudness_slope_db_s: Gaussian,
}

impl EffectSize {
    /// (pre, post) parameter distributions.
    pub fn states(self) -> (StateParams, StateParams) {
        match self {
            EffectSize::Null => {
                let s = StateParams {
                    duration_s: g(5.6, 1.5),
                    jitter_pct: g(1.5, 0.5),
                    shimmer_pct: g(4.5, 1.2),
                    hnr_db: g(15.0, 3.0),
                    wobble_pct: g(2.5, 0.8),
                    loudness_slope_db_s: g(150.0, 40.0),
                };
                (s, s)
            }
            EffectSize::Moderate => (
                StateParams {
                    duration_s: g(4.71, 3.78),
                    jitter_pct: g(1.8, 0.5),
                    shimmer_pct: g(5.2, 1.2),
                    hnr_db: g(13.0, 3.0),
                    wobble_pct: g(3.0, 0.8),
                    loudness_slope_db_s: g(170.0, 40.0),
                },
                StateParams {
                    duration_s: g(6.52, 4.17),
                    jitter_pct: g(1.3, 0.5),
                    shimmer_pct: g(4.0, 1.2),
                    hnr_db: g(16.0, 3.0),
                    wobble_pct: g(2.2, 0.8),
                    loudness_slope_db_s: g(130.0, 40.0),
                },
            ),
            EffectSize::Strong => (
                StateParams {
                    duration_s: g(4.71, 0.6),
                    jitter_pct: g(2.5, 0.35),
                    shimmer_pct: g(7.0, 0.8),
                    hnr_db: g(11.0, 2.0),
                    wobble_pct: g(4.0, 0.6),
                    loudness_slope_db_s: g(220.0, 30.0),
                },
                StateParams {
                    duration_s: g(6.52, 0.6),
                    jitter_pct: g(1.0, 0.35),
                    shimmer_pct: g(3.0, 0.8),
                    hnr_db: g(19.0, 2.0),
                    wobble_pct: g(1.5, 0.6),
                    loudness_slope_db_s: g(110.0, 30.0),
                },
            ),
        }
    }
}

fn default_female_fraction() -> f64 {
    0.48
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_speakers: usize,
    #[serde(default = "default_female_fraction")]
    pub female_fraction: f64,
    pub effect: EffectSize,
    pub seed: u64,
    /// Also render 20 pseudo-phrases per session.
    #[serde(default)]
    pub phrases: bool,
    /// Overrides for the effect preset.
    #[serde(default)]
    pub pre: Option<StateParams>,
    #[serde(default)]
    pub post: Option<StateParams>,
}

impl CohortSpec {
    pub fn new(n_speakers: usize, effect: EffectSize, seed: u64) -> Self {
        Self {
            n_speakers,
            female_fraction: default_female_fraction(),
            effect,
            seed,
            phrases: false,
            pre: None,
            post: None,
        }
    }

    pub fn states(&self) -> (StateParams, StateParams) {
        let (pre, post) = self.effect.states();
        (self.pre.unwrap_or(pre), self.post.unwrap_or(post))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_speakers == 0 {
            return Err(SynthError::InvalidSpec("n_speakers must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return Err(SynthError::InvalidSpec("female_fraction must be within [0, 1]".into()));
        }
        if self.effect == EffectSize::Null && self.pre != self.post {
            return Err(SynthError::InvalidSpec(
                "a null cohort needs identical pre and post distributions".into(),
            ));
        }
        Ok(())
    }
}

/// Per-speaker shifts shared by both sessions.
const SPEAKER_SD: StateParams = StateParams {
    duration_s: g(0.0, 0.5),
    jitter_pct: g(0.0, 0.3),
    shimmer_pct: g(0.0, 0.8),
    hnr_db: g(0.0, 2.0),
    wobble_pct: g(0.0, 0.4),
    loudness_slope_db_s: g(0.0, 20.0),
};

/// One row of the planted-parameter log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRow {
    pub speaker_id: String,
    pub session: Session,
    pub gender: Gender,
    pub kind: InstanceKind,
    pub path: PathBuf,
    pub f0_hz: f64,
    pub duration_s: f64,
    pub jitter_pct: f64,
    pub shimmer_pct: f64,
    pub hnr_db: f64,
    pub wobble_pct: f64,
    pub loudness_slope_db_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub manifest: CohortManifest,
    pub manifest_path: PathBuf,
    pub planted: Vec<PlantedRow>,
}

fn draw(rng: &mut ChaCha8Rng, d: Gaussian) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    d.mean + d.sd * z
}

struct Job {
    instance: Instance,
    params: VoiceParams,
    phrase_seed: Option<u64>,
}

/// Draws every planted parameter for a cohort (no audio is rendered).
fn plan(spec: &CohortSpec) -> Vec<Job> {
    let (pre, post) = spec.states();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n_speakers.to_string().len().max(2);
    let mut jobs = Vec::new();
    for s in 0..spec.n_speakers {
        let ff = spec.female_fraction;
        let female = ((s + 1) as f64 * ff).floor() > (s as f64 * ff).floor();
        let gender = if female { Gender::Female } else { Gender::Male };
        let speaker_id = format!("spk{:0width$}", s + 1);
        let f0 = if female {
            draw(&mut rng, g(210.0, 20.0))
        } else {
            draw(&mut rng, g(120.0, 15.0))
        }
        .clamp(70.0, 320.0);
        let formant_scale = draw(&mut rng, g(1.0, 0.04)) * if female { 1.15 } else { 1.0 };
        let offsets = [
            draw(&mut rng, SPEAKER_SD.duration_s),
            draw(&mut rng, SPEAKER_SD.jitter_pct),
            draw(&mut rng, SPEAKER_SD.shimmer_pct),
            draw(&mut rng, SPEAKER_SD.hnr_db),
            draw(&mut rng, SPEAKER_SD.wobble_pct),
            draw(&mut rng, SPEAKER_SD.loudness_slope_db_s),
        ];
        for session in Session::ALL {
            let state = match session {
                Session::PreTreatment => pre,
                Session::PostTreatment => post,
            };
            let mut kinds: Vec<InstanceKind> = Vowel::ALL.iter().map(|&v| InstanceKind::Vowel(v)).collect();
            if spec.phrases {
                kinds.extend((1..=PHRASES_PER_SESSION).map(InstanceKind::Phrase));
            }
            for kind in kinds {
                let vowel = match kind {
                    InstanceKind::Vowel(v) => v,
                    InstanceKind::Phrase(_) => Vowel::A,
                };
                let formants = vowel_formants(vowel).map(|r| Resonance {
                    freq_hz: r.freq_hz * formant_scale,
                    bandwidth_hz: r.bandwidth_hz,
                });
                let duration = (draw(&mut rng, state.duration_s) + offsets[0]).clamp(0.5, 20.0);
                let params = VoiceParams {
                    f0_hz: (f0 * (1.0 + 0.02 * draw(&mut rng, g(0.0, 1.0)))).clamp(55.0, 500.0),
                    duration_s: duration,
                    jitter_pct: (draw(&mut rng, state.jitter_pct) + offsets[1]).clamp(0.0, 20.0),
                    shimmer_pct: (draw(&mut rng, state.shimmer_pct) + offsets[2]).clamp(0.0, 20.0),
                    perturbation: Perturbation::Gaussian,
                    hnr_db: draw(&mut rng, state.hnr_db) + offsets[3],
                    formants,
                    wobble_pct: (draw(&mut rng, state.wobble_pct) + offsets[4]).clamp(0.0, 20.0),
                    loudness_onset_slope_db_s: (draw(&mut rng, state.loudness_slope_db_s) + offsets[5])
                        .max(10.0),
                    seed: rng.random(),
                };
                let phrase_seed = matches!(kind, InstanceKind::Phrase(_)).then(|| rng.random());
                let file = format!("{speaker_id}_{session}_{kind}.wav");
                jobs.push(Job {
                    instance: Instance {
                        speaker_id: speaker_id.clone(),
                        session,
                        gender,
                        kind,
                        path: PathBuf::from(file),
                    },
                    params,
                    phrase_seed,
                });
            }
        }
    }
    jobs
}

/// Planted parameters for `spec` without rendering audio.
pub fn planted_parameters(spec: &CohortSpec) -> Vec<PlantedRow> {
    plan(spec).iter().map(planted_row).collect()
}

fn planted_row(job: &Job) -> PlantedRow {
    let p = &job.params;
    PlantedRow {
        speaker_id: job.instance.speaker_id.clone(),
        session: job.instance.session,
        gender: job.instance.gender,
        kind: job.instance.kind,
        path: job.instance.path.clone(),
        f0_hz: p.f0_hz,
        duration_s: if job.phrase_seed.is_some() { 0.0 } else { p.duration_s },
        jitter_pct: p.jitter_pct,
        shimmer_pct: p.shimmer_pct,
        hnr_db: p.hnr_db,
        wobble_pct: p.wobble_pct,
        loudness_slope_db_s: p.loudness_onset_slope_db_s,
        seed: p.seed,
    }
}

/// Renders a cohort into `out_dir`: one WAV per instance, `manifest.csv`
/// (paths relative to `out_dir`) and `planted_params.csv`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: impl AsRef<Path>) -> Result<GeneratedCohort, SynthError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let jobs = plan(spec);
    jobs.par_iter().try_for_each(|job| -> Result<(), SynthError> {
        let signal = match job.phrase_seed {
            Some(seed) => synth_phrase(&job.params, seed)?,
            None => synth_vowel(&job.params)?,
        };
        write_wav(out_dir.join(&job.instance.path), &signal)?;
        Ok(())
    })?;

    let planted: Vec<PlantedRow> = jobs.iter().map(planted_row).collect();
    let mut w = csv::Writer::from_path(out_dir.join("planted_params.csv"))?;
    for row in &planted {
        w.serialize(row)?;
    }
    w.flush()?;

    let manifest = CohortManifest::from_instances(jobs.into_iter().map(|j| j.instance).collect())?;
    let manifest_path = out_dir.join("manifest.csv");
    manifest.write_csv(&manifest_path)?;
    Ok(GeneratedCohort {
        manifest,
        manifest_path,
        planted,
    })
}

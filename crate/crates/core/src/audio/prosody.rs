//! Frame-level prosody: fundamental frequency by sub-harmonic summation,
//! voicing probability from window-corrected autocorrelation, and a loudness
//! proxy.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::pcm::PcmSignal;
use crate::error::{Error, Result};

/// Dimension of the per-frame audio descriptor `(f0 / f0_max, voicing, loudness)`.
pub const AUDIO_DESCRIPTOR_DIM: usize = 3;

const LOUDNESS_EXPONENT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProsodyConfig {
    /// Analysis window length in seconds.
    pub window: f64,
    /// Hop between frames in seconds.
    pub hop: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Number of harmonics summed per candidate.
    pub harmonics: usize,
    /// Per-harmonic compression factor.
    pub compression: f64,
    pub voicing_threshold: f64,
    /// Resolution of the log-frequency candidate grid.
    pub points_per_octave: usize,
}

impl Default for ProsodyConfig {
    fn default() -> Self {
        ProsodyConfig {
            window: 0.05,
            hop: 0.01,
            f0_min: 55.0,
            f0_max: 400.0,
            harmonics: 5,
            compression: 0.85,
            voicing_threshold: 0.45,
            points_per_octave: 48,
        }
    }
}

impl ProsodyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0.0 && self.window >= self.hop) {
            return Err(Error::Config("need window >= hop > 0".into()));
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max) {
            return Err(Error::Config("need 0 < f0_min < f0_max".into()));
        }
        if self.harmonics == 0 || self.points_per_octave == 0 {
            return Err(Error::Config("harmonics and points_per_octave must be positive".into()));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::Config("compression must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.voicing_threshold) {
            return Err(Error::Config("voicing_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProsodyFrame {
    /// Hz; zero when unvoiced.
    pub f0: f64,
    pub voicing: f64,
    pub loudness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyTrack {
    pub frames: Vec<ProsodyFrame>,
    /// Seconds between consecutive frames.
    pub frame_period: f64,
}

impl ProsodyTrack {
    /// Flattened `(f0 / f0_max, voicing, loudness)` rows.
    pub fn descriptors(&self, f0_max: f64) -> Vec<[f64; AUDIO_DESCRIPTOR_DIM]> {
        self.frames
            .iter()
            .map(|f| [f.f0 / f0_max, f.voicing, f.loudness])
            .collect()
    }
}

pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos())
        .collect()
}

fn samples_for(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round() as usize
}

/// Number of blocks `frame_signal` yields for a signal of `len` samples.
pub fn frame_count(len: usize, window_len: usize, hop_len: usize) -> usize {
    if len < window_len || window_len == 0 || hop_len == 0 {
        0
    } else {
        (len - window_len) / hop_len + 1
    }
}

/// Splits a signal into Hann-weighted blocks of `round(window * rate)`
/// samples spaced `round(hop * rate)` apart.
pub fn frame_signal(signal: &PcmSignal, window: f64, hop: f64) -> Result<Vec<Vec<f64>>> {
    if !(hop > 0.0 && window >= hop) {
        return Err(Error::Config("need window >= hop > 0".into()));
    }
    let win = samples_for(window, signal.sample_rate).max(1);
    let step = samples_for(hop, signal.sample_rate).max(1);
    if signal.samples.len() < win {
        return Err(Error::SignalTooShort {
            len: signal.samples.len(),
            needed: win,
        });
    }
    let weights = hann_window(win);
    let n = frame_count(signal.samples.len(), win, step);
    Ok((0..n)
        .map(|i| {
            let start = i * step;
            signal.samples[start..start + win]
                .iter()
                .zip(&weights)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// `RMS(block)^0.3`; zero exactly when the block is all-zero.
pub fn loudness(block: &[f64]) -> f64 {
    if block.is_empty() {
        return 0.0;
    }
    let ms = block.iter().map(|s| s * s).sum::<f64>() / block.len() as f64;
    if !ms.is_finite() {
        return 0.0;
    }
    ms.sqrt().powf(LOUDNESS_EXPONENT)
}

/// Reusable per-block analysis state: FFT plans, the log-frequency
/// candidate grid and the Hann window's autocorrelation.
pub struct ProsodyAnalyzer {
    config: ProsodyConfig,
    sample_rate: u32,
    block_len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    candidates: Vec<f64>,
    log_step: f64,
    min_lag: usize,
    max_lag: usize,
    window_acf: Vec<f64>,
    window_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    pub f0: f64,
    pub salience: f64,
}

impl ProsodyAnalyzer {
    pub fn new(config: &ProsodyConfig, sample_rate: u32, block_len: usize) -> Result<Self> {
        config.validate()?;
        if sample_rate == 0 || block_len == 0 {
            return Err(Error::Config("sample rate and block length must be positive".into()));
        }
        if config.f0_max >= sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "f0_max {} must be below Nyquist ({} Hz)",
                config.f0_max,
                sample_rate as f64 / 2.0
            )));
        }
        // Zero-pad generously: the magnitude spectrum is linearly interpolated,
        // and the inverse transform must hold the full linear autocorrelation.
        let fft_len = (block_len.next_power_of_two() * 8).max(16_384);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        let octaves = (config.f0_max / config.f0_min).log2();
        let points = (config.points_per_octave as f64 * octaves).ceil() as usize + 1;
        let log_step = octaves / (points - 1) as f64;
        let candidates = (0..points)
            .map(|k| {
                if k == points - 1 {
                    config.f0_max
                } else {
                    config.f0_min * (k as f64 * log_step).exp2()
                }
            })
            .collect();

        let rate = sample_rate as f64;
        let min_lag = ((rate / config.f0_max).floor() as usize).max(1);
        let max_lag = ((rate / config.f0_min).ceil() as usize).min(block_len / 2);

        let window = hann_window(block_len);
        let w0: f64 = window.iter().map(|w| w * w).sum();
        let window_acf = (0..=max_lag.max(min_lag))
            .map(|lag| {
                if lag >= block_len {
                    return 0.0;
                }
                let r: f64 = window[..block_len - lag]
                    .iter()
                    .zip(&window[lag..])
                    .map(|(a, b)| a * b)
                    .sum();
                r / w0
            })
            .collect();
        let window_rms = (w0 / block_len as f64).sqrt();

        Ok(ProsodyAnalyzer {
            config: config.clone(),
            sample_rate,
            block_len,
            fft_len,
            forward,
            inverse,
            candidates,
            log_step,
            min_lag,
            max_lag,
            window_acf,
            window_rms,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    fn spectrum(&self, block: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        for (dst, &s) in buf.iter_mut().zip(block) {
            dst.re = if s.is_finite() { s } else { 0.0 };
        }
        self.forward.process(&mut buf);
        buf
    }

    fn magnitude_at(mag: &[f64], bin_hz: f64, freq: f64) -> f64 {
        let pos = freq / bin_hz;
        let lo = pos.floor() as usize;
        if lo + 1 >= mag.len() {
            return 0.0;
        }
        let frac = pos - lo as f64;
        mag[lo] * (1.0 - frac) + mag[lo + 1] * frac
    }

    fn shs_from_spectrum(&self, spec: &[Complex<f64>]) -> PitchEstimate {
        let half = self.fft_len / 2 + 1;
        let mag: Vec<f64> = spec[..half].iter().map(|c| c.norm()).collect();
        let bin_hz = self.sample_rate as f64 / self.fft_len as f64;
        let nyquist = self.sample_rate as f64 / 2.0;

        let scores: Vec<f64> = self
            .candidates
            .iter()
            .map(|&f| {
                let mut weight = 1.0;
                let mut total = 0.0;
                for h in 1..=self.config.harmonics {
                    let fh = f * h as f64;
                    if fh >= nyquist {
                        break;
                    }
                    total += weight * Self::magnitude_at(&mag, bin_hz, fh);
                    weight *= self.config.compression;
                }
                total
            })
            .collect();

        let (best, &peak) = scores
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
        if !(peak > 0.0) || !peak.is_finite() {
            return PitchEstimate {
                f0: self.config.f0_min,
                salience: 0.0,
            };
        }

        let mut pos = best as f64;
        let mut salience = peak;
        if best > 0 && best + 1 < scores.len() {
            let (a, b, c) = (scores[best - 1], peak, scores[best + 1]);
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                let delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
                pos += delta;
                salience = b - 0.25 * (a - c) * delta;
            }
        }
        let f0 = (self.config.f0_min * (pos * self.log_step).exp2())
            .clamp(self.config.f0_min, self.config.f0_max);
        PitchEstimate { f0, salience }
    }

    pub fn estimate_f0(&self, block: &[f64]) -> PitchEstimate {
        self.shs_from_spectrum(&self.spectrum(block))
    }

    fn voicing_from_spectrum(&self, spec: &[Complex<f64>]) -> f64 {
        let mut power: Vec<Complex<f64>> = spec
            .iter()
            .map(|c| Complex::new(c.norm_sqr(), 0.0))
            .collect();
        self.inverse.process(&mut power);
        let r0 = power[0].re;
        if !(r0 > 0.0) || !r0.is_finite() {
            return 0.0;
        }
        let mut best: f64 = 0.0;
        for lag in self.min_lag..=self.max_lag {
            let rw = self.window_acf[lag];
            if rw <= 1e-6 {
                continue;
            }
            let r = power[lag].re / r0 / rw;
            if r > best {
                best = r;
            }
        }
        best.clamp(0.0, 1.0)
    }

    /// Peak window-corrected normalized autocorrelation over the F0 lag range.
    /// Expects a Hann-weighted block of the analyzer's length.
    pub fn voicing_probability(&self, block: &[f64], salience: f64) -> f64 {
        if !(salience > 0.0) {
            return 0.0;
        }
        self.voicing_from_spectrum(&self.spectrum(block))
    }

    /// Full per-block analysis with a single forward transform.
    pub fn analyze_block(&self, block: &[f64]) -> ProsodyFrame {
        let spec = self.spectrum(block);
        let pitch = self.shs_from_spectrum(&spec);
        let voicing = if pitch.salience > 0.0 {
            self.voicing_from_spectrum(&spec)
        } else {
            0.0
        };
        let voiced = pitch.salience > 0.0 && voicing >= self.config.voicing_threshold;
        // Undo the window's attenuation so a steady tone's loudness does not
        // depend on the window shape.
        let loud = loudness(block) / self.window_rms.powf(LOUDNESS_EXPONENT);
        ProsodyFrame {
            f0: if voiced { pitch.f0 } else { 0.0 },
            voicing,
            loudness: if loud.is_finite() { loud } else { 0.0 },
        }
    }
}

/// Sub-harmonic summation pitch estimate for a single block.
pub fn estimate_f0_shs(
    block: &[f64],
    sample_rate: u32,
    f0_min: f64,
    f0_max: f64,
) -> Result<PitchEstimate> {
    let config = ProsodyConfig {
        f0_min,
        f0_max,
        ..ProsodyConfig::default()
    };
    Ok(ProsodyAnalyzer::new(&config, sample_rate, block.len())?.estimate_f0(block))
}

/// Voicing probability in [0, 1] for a Hann-weighted block using the default
/// F0 search range.
pub fn voicing_probability(block: &[f64], salience: f64, sample_rate: u32) -> Result<f64> {
    let analyzer = ProsodyAnalyzer::new(&ProsodyConfig::default(), sample_rate, block.len())?;
    Ok(analyzer.voicing_probability(block, salience))
}

pub fn extract_prosody(signal: &PcmSignal, config: &ProsodyConfig) -> Result<ProsodyTrack> {
    config.validate()?;
    let blocks = frame_signal(signal, config.window, config.hop)?;
    let analyzer = ProsodyAnalyzer::new(config, signal.sample_rate, blocks[0].len())?;
    let frames = blocks.iter().map(|b| analyzer.analyze_block(b)).collect();
    let hop = samples_for(config.hop, signal.sample_rate).max(1);
    Ok(ProsodyTrack {
        frames,
        frame_period: hop as f64 / signal.sample_rate as f64,
    })
}

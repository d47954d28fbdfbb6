//! Synthetic two-class corpus: harmonic tones whose pitch depends on the
//! class, and videos of blobs drifting right (positive) or left (negative)
//! with a decaying motion trail.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::derive_seed;
use crate::audio::{write_pcm, PcmSignal};
use crate::corpus::{Manifest, SegmentRecord, Split};
use crate::error::{Error, Result};
use crate::video::{write_fvl, FrameVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub segments: usize,
    /// The first `train` segments go to the training split, the rest to
    /// validation.
    pub train: usize,
    pub sample_rate: u32,
    pub duration: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub positive_f0: (f64, f64),
    pub negative_f0: (f64, f64),
    /// Blob speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Fraction of the previous frame's trail carried into the next.
    pub persistence: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            segments: 200,
            train: 150,
            sample_rate: 16_000,
            duration: 1.0,
            frames: 40,
            height: 48,
            width: 48,
            positive_f0: (280.0, 360.0),
            negative_f0: (100.0, 160.0),
            speed: (1.5, 2.5),
            persistence: 0.9,
        }
    }
}

const HARMONICS: usize = 5;
const EVENTS: usize = 3;
const BLOB_SIGMA: f64 = 3.0;
const EVENT_SIGMA_T: f64 = 4.0;

pub fn synth_tone(rng: &mut ChaCha8Rng, f0: f64, cfg: &SynthConfig) -> Result<PcmSignal> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.duration * sr).round() as usize;
    let amp = rng.random_range(0.3..0.6);
    let vib_rate = rng.random_range(3.0..5.0);
    let norm: f64 = (1..=HARMONICS).map(|h| 1.0 / h as f64).sum();
    let mut phase = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + 0.015 * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let tone: f64 = (1..=HARMONICS)
                .map(|h| (h as f64 * phase).sin() / h as f64)
                .sum();
            amp * tone / norm + rng.random_range(-0.005..0.005)
        })
        .collect();
    PcmSignal::new(samples, cfg.sample_rate)
}

struct Event {
    t: f64,
    x: f64,
    y: f64,
    amp: f64,
    velocity: f64,
}

pub fn synth_video(rng: &mut ChaCha8Rng, rightward: bool, cfg: &SynthConfig) -> Result<FrameVolume> {
    let (t_len, h, w) = (cfg.frames, cfg.height, cfg.width);
    let dir = if rightward { 1.0 } else { -1.0 };
    let margin = 0.3 * w.min(h) as f64;
    let events: Vec<Event> = (0..EVENTS)
        .map(|_| Event {
            t: rng.random_range(0.25 * t_len as f64..0.75 * t_len as f64),
            x: rng.random_range(margin..w as f64 - margin),
            y: rng.random_range(margin..h as f64 - margin),
            amp: rng.random_range(0.6..1.0),
            velocity: dir * rng.random_range(cfg.speed.0..cfg.speed.1),
        })
        .collect();

    let mut trail = vec![0.0; t_len * h * w];
    for t in 0..t_len {
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.0;
                for e in &events {
                    let dt = t as f64 - e.t;
                    let cx = e.x + e.velocity * dt;
                    let r2 = (x as f64 - cx).powi(2) + (y as f64 - e.y).powi(2);
                    v += e.amp
                        * (-r2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp()
                        * (-dt * dt / (2.0 * EVENT_SIGMA_T * EVENT_SIGMA_T)).exp();
                }
                let idx = (t * h + y) * w + x;
                if t > 0 {
                    v += cfg.persistence * trail[idx - h * w];
                }
                trail[idx] = v;
            }
        }
    }
    let peak = trail.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let data = trail
        .iter()
        .map(|v| 0.1 + 0.8 * v / peak + rng.random_range(-0.004..0.004))
        .collect();
    FrameVolume::new(t_len, h, w, data, 25.0)
}

/// Writes the corpus under `dir` (media in `dir/media`, manifest at
/// `dir/manifest.jsonl`) and returns the manifest with relative paths.
pub fn write_synth_corpus(dir: &Path, cfg: &SynthConfig, seed: u64) -> Result<Manifest> {
    if cfg.segments == 0 || cfg.train > cfg.segments {
        return Err(Error::Config("synth needs segments > 0 and train <= segments".into()));
    }
    let media = dir.join("media");
    std::fs::create_dir_all(&media).map_err(|e| Error::io(&media, e))?;
    let width = cfg.segments.saturating_sub(1).to_string().len().max(3);
    let records: Vec<SegmentRecord> = (0..cfg.segments)
        .into_par_iter()
        .map(|i| {
            let id = format!("seg{i:0width$}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("synth/{id}")));
            let positive = i % 2 == 0;
            let (lo, hi) = if positive { cfg.positive_f0 } else { cfg.negative_f0 };
            let f0 = rng.random_range(lo..hi);
            let tone = synth_tone(&mut rng, f0, cfg)?;
            let video = synth_video(&mut rng, positive, cfg)?;
            let u: f64 = rng.random();
            let sentiment = if positive {
                (3000.0 * (1.0 - u)).ceil() / 1000.0
            } else {
                -(3000.0 * u).floor() / 1000.0
            };
            let audio_rel = PathBuf::from("media").join(format!("{id}.pcm"));
            let video_rel = PathBuf::from("media").join(format!("{id}.fvl"));
            write_pcm(&dir.join(&audio_rel), &tone)?;
            write_fvl(&dir.join(&video_rel), &video)?;
            Ok(SegmentRecord {
                id,
                audio_path: audio_rel,
                video_path: video_rel,
                sentiment: Some(sentiment),
                split: if i < cfg.train { Split::Train } else { Split::Validation },
                sample_rate: None,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(records);
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const PCM_MAGIC: &[u8; 4] = b"PCM1";
pub const PCM_HEADER_LEN: usize = 16;

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl PcmSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(PcmSignal {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn sample_to_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

fn i16_to_sample(v: i16) -> f64 {
    v as f64 / 32768.0
}

/// Decodes PCM bytes. Data starting with the `PCM1` magic is read as the
/// header variant; anything else is headerless 16-bit LE and needs
/// `fallback_rate`.
pub fn decode_pcm(bytes: &[u8], fallback_rate: Option<u32>) -> Result<PcmSignal> {
    if bytes.len() >= 4 && &bytes[..4] == PCM_MAGIC {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::format("PCM1", "truncated header"))?;
        let rate = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::format("PCM1", "truncated header"))?;
        let count = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::format("PCM1", "truncated header"))?;
        if rate == 0 {
            return Err(Error::format("PCM1", "zero sample rate"));
        }
        let body = &bytes[PCM_HEADER_LEN..];
        if count.checked_mul(2) != Some(body.len() as u64) {
            return Err(Error::format(
                "PCM1",
                format!("header declares {count} samples, body has {} bytes", body.len()),
            ));
        }
        return PcmSignal::new(decode_samples(body), rate);
    }
    let rate = fallback_rate.ok_or_else(|| {
        Error::format("PCM", "headerless audio requires a sample rate")
    })?;
    if rate == 0 {
        return Err(Error::format("PCM", "zero sample rate"));
    }
    if bytes.len() % 2 != 0 {
        return Err(Error::format("PCM", "odd byte count for 16-bit samples"));
    }
    PcmSignal::new(decode_samples(bytes), rate)
}

fn decode_samples(body: &[u8]) -> Vec<f64> {
    body.chunks_exact(2)
        .map(|c| i16_to_sample(i16::from_le_bytes([c[0], c[1]])))
        .collect()
}

/// Encodes with the 16-byte `PCM1` header.
pub fn encode_pcm(signal: &PcmSignal) -> Vec<u8> {
    let mut out = Vec::with_capacity(PCM_HEADER_LEN + 2 * signal.samples.len());
    out.extend_from_slice(PCM_MAGIC);
    out.write_u32::<LittleEndian>(signal.sample_rate).unwrap();
    out.write_u64::<LittleEndian>(signal.samples.len() as u64)
        .unwrap();
    for &s in &signal.samples {
        out.write_i16::<LittleEndian>(sample_to_i16(s)).unwrap();
    }
    out
}

pub fn read_pcm(path: &Path, fallback_rate: Option<u32>) -> Result<PcmSignal> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pcm(&bytes, fallback_rate)
}

pub fn write_pcm(path: &Path, signal: &PcmSignal) -> Result<()> {
    std::fs::write(path, encode_pcm(signal)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let sig = PcmSignal::new(vec![0.0, 0.5, -0.5, 1.0, -1.0], 16_000).unwrap();
        let bytes = encode_pcm(&sig);
        assert_eq!(bytes.len(), 16 + 10);
        let back = decode_pcm(&bytes, None).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in sig.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn headerless_needs_rate() {
        let raw = [0u8, 0, 0xff, 0x7f];
        assert!(decode_pcm(&raw, None).is_err());
        let sig = decode_pcm(&raw, Some(8000)).unwrap();
        assert_eq!(sig.samples.len(), 2);
        assert!((sig.samples[1] - 32767.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn count_mismatch_rejected() {
        let sig = PcmSignal::new(vec![0.1; 4], 8000).unwrap();
        let mut bytes = encode_pcm(&sig);
        bytes.pop();
        assert!(decode_pcm(&bytes, None).is_err());
        // Huge declared count must not overflow or allocate.
        let mut evil = PCM_MAGIC.to_vec();
        evil.extend_from_slice(&8000u32.to_le_bytes());
        evil.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_pcm(&evil, None).is_err());
    }
}

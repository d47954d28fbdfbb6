use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const FVL_MAGIC: &[u8; 4] = b"FVL1";
pub const FVL_HEADER_LEN: usize = 20;

pub const MIN_FRAMES: usize = 3;
pub const MIN_SIDE: usize = 16;

/// Grayscale `T x H x W` intensities in [0, 1], frame-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVolume {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    /// Frames per second.
    pub frame_rate: f64,
}

impl FrameVolume {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        frame_rate: f64,
    ) -> Result<Self> {
        if frames < MIN_FRAMES || height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Volume(format!(
                "{frames}x{height}x{width} is below the minimum {MIN_FRAMES}x{MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        let expected = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Volume("dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Volume(format!(
                "expected {expected} intensities, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Volume("non-finite intensity".into()));
        }
        Ok(FrameVolume {
            frames,
            height,
            width,
            data,
            frame_rate,
        })
    }

    /// Builds a volume by evaluating `f(t, y, x)` at every voxel.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        frame_rate: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(t, y, x));
                }
            }
        }
        Self::new(frames, height, width, data, frame_rate)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> f64 {
        self.data[(t * self.height + y) * self.width + x]
    }

    /// Applies `alpha * v + beta` to every voxel.
    pub fn map_affine(&self, alpha: f64, beta: f64) -> FrameVolume {
        FrameVolume {
            data: self.data.iter().map(|v| alpha * v + beta).collect(),
            ..self.clone()
        }
    }
}

/// Decodes an `FVL1` raw frame volume.
pub fn decode_fvl(bytes: &[u8]) -> Result<FrameVolume> {
    if bytes.len() < FVL_HEADER_LEN || &bytes[..4] != FVL_MAGIC {
        return Err(Error::format("FVL1", "missing magic or truncated header"));
    }
    let mut cur = &bytes[4..FVL_HEADER_LEN];
    let mut next = || cur.read_u32::<LittleEndian>().expect("header length checked") as usize;
    let (t, h, w, milli_hz) = (next(), next(), next(), next());
    let body = &bytes[FVL_HEADER_LEN..];
    let expected = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("FVL1", "dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::format(
            "FVL1",
            format!("header declares {t}x{h}x{w} voxels, body has {} bytes", body.len()),
        ));
    }
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    FrameVolume::new(t, h, w, data, milli_hz as f64 / 1000.0)
}

/// Encodes as `FVL1`, quantizing intensities to 8 bits.
pub fn encode_fvl(volume: &FrameVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(FVL_HEADER_LEN + volume.data.len());
    out.extend_from_slice(FVL_MAGIC);
    for v in [volume.frames, volume.height, volume.width] {
        out.write_u32::<LittleEndian>(v as u32).unwrap();
    }
    out.write_u32::<LittleEndian>((volume.frame_rate * 1000.0).round() as u32)
        .unwrap();
    out.extend(
        volume
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_fvl(path: &Path) -> Result<FrameVolume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fvl(&bytes)
}

pub fn write_fvl(path: &Path, volume: &FrameVolume) -> Result<()> {
    std::fs::write(path, encode_fvl(volume)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_volumes() {
        assert!(FrameVolume::new(2, 16, 16, vec![0.0; 512], 25.0).is_err());
        assert!(FrameVolume::new(3, 15, 16, vec![0.0; 720], 25.0).is_err());
        assert!(FrameVolume::new(3, 16, 16, vec![0.0; 10], 25.0).is_err());
    }

    #[test]
    fn fvl_round_trip_quantizes() {
        let v = FrameVolume::from_fn(3, 16, 17, 29.97, |t, y, x| ((t + y + x) % 7) as f64 / 6.0)
            .unwrap();
        let bytes = encode_fvl(&v);
        assert_eq!(bytes.len(), 20 + 3 * 16 * 17);
        let back = decode_fvl(&bytes).unwrap();
        assert_eq!((back.frames(), back.height(), back.width()), (3, 16, 17));
        assert!((back.frame_rate - 29.97).abs() < 1e-9);
        for (a, b) in v.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn truncated_body_rejected() {
        let v = FrameVolume::from_fn(3, 16, 16, 25.0, |_, _, _| 0.5).unwrap();
        let mut bytes = encode_fvl(&v);
        bytes.pop();
        assert!(decode_fvl(&bytes).is_err());
        assert!(decode_fvl(b"FVL1").is_err());
    }
}

//! Level-1 video stage: space-time interest points from box-filtered
//! Hessian responses, described with upright SURF.

mod detect;
mod hessian;
mod integral;
mod surf;
mod volume;

use serde::{Deserialize, Serialize};

pub use detect::{detect, InterestPoint, ScaleLadder};
pub use hessian::{
    hessian_components, hessian_response, lobe_len, FilterGeometry, HessianComponents,
    MIXED_WEIGHT,
};
pub use integral::{build_integral, IntegralVolume};
pub use surf::{describe, SurfDescriptor, SURF_DIM};
pub use volume::{
    decode_fvl, encode_fvl, read_fvl, write_fvl, FrameVolume, FVL_HEADER_LEN, FVL_MAGIC,
};

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrofConfig {
    /// Spatial scales in pixels.
    pub spatial_scales: Vec<f64>,
    /// Temporal scales in frames.
    pub temporal_scales: Vec<f64>,
    pub threshold: f64,
    pub max_points_per_segment: usize,
}

impl Default for TrofConfig {
    fn default() -> Self {
        TrofConfig {
            spatial_scales: vec![1.2, 2.4, 4.8],
            temporal_scales: vec![1.0, 2.0, 4.0],
            threshold: 1e-4,
            max_points_per_segment: 400,
        }
    }
}

impl TrofConfig {
    pub fn ladder(&self) -> ScaleLadder {
        ScaleLadder {
            spatial: self.spatial_scales.clone(),
            temporal: self.temporal_scales.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder().is_empty() {
            return Err(Error::Config("scale ladder must be nonempty".into()));
        }
        if self
            .spatial_scales
            .iter()
            .chain(&self.temporal_scales)
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::Config("scales must be positive".into()));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::Config("threshold must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Detects and describes up to `max_points_per_segment` interest points,
/// strongest first.
pub fn extract_points(volume: &FrameVolume, config: &TrofConfig) -> Result<Vec<(InterestPoint, SurfDescriptor)>> {
    config.validate()?;
    let iv = build_integral(volume);
    let mut points = detect(&iv, &config.ladder(), config.threshold);
    points.truncate(config.max_points_per_segment);
    Ok(points
        .into_iter()
        .map(|p| {
            let d = describe(volume, &p);
            (p, d)
        })
        .collect())
}

pub fn extract_video_descriptors(
    segment_id: &str,
    volume: &FrameVolume,
    config: &TrofConfig,
) -> Result<DescriptorSet> {
    let rows: Vec<[f64; SURF_DIM]> = extract_points(volume, config)?
        .into_iter()
        .map(|(_, d)| d.values)
        .collect();
    DescriptorSet::from_rows(segment_id, SURF_DIM, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event_video(cx: f64, cy: f64, ct: f64) -> FrameVolume {
        FrameVolume::from_fn(36, 48, 48, 25.0, |t, y, x| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let dt = t as f64 - ct;
            0.2 + 0.7 * (-(dx * dx + dy * dy) / 18.0 - dt * dt / 8.0).exp()
        })
        .unwrap()
    }

    #[test]
    fn constant_video_is_empty() {
        let v = FrameVolume::from_fn(36, 48, 48, 25.0, |_, _, _| 0.5).unwrap();
        let set = extract_video_descriptors("c", &v, &TrofConfig::default()).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.dim(), SURF_DIM);
    }

    #[test]
    fn blob_video_bounded_and_deterministic() {
        let v = event_video(24.0, 24.0, 18.0);
        let cfg = TrofConfig {
            max_points_per_segment: 5,
            ..TrofConfig::default()
        };
        let a = extract_video_descriptors("b", &v, &cfg).unwrap();
        assert!(!a.is_empty() && a.len() <= 5);
        let b = extract_video_descriptors("b", &v, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

use rayon::prelude::*;

use super::hessian::{components_unchecked, FilterGeometry};
use super::integral::IntegralVolume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterestPoint {
    pub x: usize,
    pub y: usize,
    pub t: usize,
    pub sigma_s: f64,
    pub sigma_t: f64,
    /// Magnitude of the Hessian determinant.
    pub response: f64,
}

/// Spatial and temporal scales; detection runs on their full cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleLadder {
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl ScaleLadder {
    pub fn is_empty(&self) -> bool {
        self.spatial.is_empty() || self.temporal.is_empty()
    }
}

struct ResponseMap {
    si: usize,
    ti: usize,
    values: Vec<f64>,
}

fn response_map(iv: &IntegralVolume, geom: FilterGeometry) -> Vec<f64> {
    let (tn, hn, wn) = (iv.frames(), iv.height(), iv.width());
    let mut values = vec![f64::NAN; tn * hn * wn];
    let (rs, rt) = (geom.radius_s(), geom.radius_t());
    if 2 * rs >= wn || 2 * rs >= hn || 2 * rt >= tn {
        return values;
    }
    for t in rt..tn - rt {
        for y in rs..hn - rs {
            for x in rs..wn - rs {
                let det = components_unchecked(iv, geom, x, y, t).determinant();
                values[(t * hn + y) * wn + x] = det.abs();
            }
        }
    }
    values
}

/// Finds strict local maxima of `|det H|` over a 3x3x3 space-time
/// neighbourhood and the adjacent scale pairs, keeping those above
/// `threshold`. Results are sorted by descending response, ties broken by
/// scale index and then `(t, y, x)`.
pub fn detect(iv: &IntegralVolume, scales: &ScaleLadder, threshold: f64) -> Vec<InterestPoint> {
    if scales.is_empty() {
        return Vec::new();
    }
    let pairs: Vec<(usize, usize)> = (0..scales.spatial.len())
        .flat_map(|si| (0..scales.temporal.len()).map(move |ti| (si, ti)))
        .collect();
    let maps: Vec<ResponseMap> = pairs
        .par_iter()
        .map(|&(si, ti)| ResponseMap {
            si,
            ti,
            values: response_map(iv, FilterGeometry::new(scales.spatial[si], scales.temporal[ti])),
        })
        .collect();

    let (tn, hn, wn) = (iv.frames(), iv.height(), iv.width());
    let n_t = scales.temporal.len();
    let map_at = |si: isize, ti: isize| -> Option<&ResponseMap> {
        if si < 0 || ti < 0 || si as usize >= scales.spatial.len() || ti as usize >= n_t {
            None
        } else {
            Some(&maps[si as usize * n_t + ti as usize])
        }
    };

    let mut points: Vec<(usize, InterestPoint)> = maps
        .par_iter()
        .enumerate()
        .flat_map_iter(|(scale_idx, map)| {
            let mut found = Vec::new();
            for t in 0..tn {
                for y in 0..hn {
                    for x in 0..wn {
                        let v = map.values[(t * hn + y) * wn + x];
                        if !(v > threshold) {
                            continue;
                        }
                        if is_strict_max(v, map, x, y, t, (tn, hn, wn), &map_at) {
                            found.push((
                                scale_idx,
                                InterestPoint {
                                    x,
                                    y,
                                    t,
                                    sigma_s: scales.spatial[map.si],
                                    sigma_t: scales.temporal[map.ti],
                                    response: v,
                                },
                            ));
                        }
                    }
                }
            }
            found.into_iter()
        })
        .collect();

    points.sort_by(|(sa, a), (sb, b)| {
        b.response
            .total_cmp(&a.response)
            .then(sa.cmp(sb))
            .then((a.t, a.y, a.x).cmp(&(b.t, b.y, b.x)))
    });
    points.into_iter().map(|(_, p)| p).collect()
}

fn is_strict_max<'a>(
    v: f64,
    map: &ResponseMap,
    x: usize,
    y: usize,
    t: usize,
    (tn, hn, wn): (usize, usize, usize),
    map_at: &impl Fn(isize, isize) -> Option<&'a ResponseMap>,
) -> bool {
    for dsi in -1..=1isize {
        for dti in -1..=1isize {
            let Some(other) = map_at(map.si as isize + dsi, map.ti as isize + dti) else {
                continue;
            };
            for dt in -1..=1isize {
                let tt = t as isize + dt;
                if tt < 0 || tt as usize >= tn {
                    continue;
                }
                for dy in -1..=1isize {
                    let yy = y as isize + dy;
                    if yy < 0 || yy as usize >= hn {
                        continue;
                    }
                    for dx in -1..=1isize {
                        if dsi == 0 && dti == 0 && dt == 0 && dy == 0 && dx == 0 {
                            continue;
                        }
                        let xx = x as isize + dx;
                        if xx < 0 || xx as usize >= wn {
                            continue;
                        }
                        let n = other.values[(tt as usize * hn + yy as usize) * wn + xx as usize];
                        // NaN marks positions without filter support.
                        if !n.is_nan() && n >= v {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::integral::build_integral;
    use crate::video::volume::FrameVolume;

    fn ladder() -> ScaleLadder {
        ScaleLadder {
            spatial: vec![1.2, 2.4, 4.8],
            temporal: vec![1.0, 2.0, 4.0],
        }
    }

    fn blobs(spec: &[(f64, (f64, f64, f64))]) -> FrameVolume {
        FrameVolume::from_fn(36, 48, 48, 25.0, |t, y, x| {
            let mut v = 0.1;
            for &(contrast, (cx, cy, ct)) in spec {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let dt = t as f64 - ct;
                v += contrast * (-(dx * dx + dy * dy) / 18.0 - dt * dt / 8.0).exp();
            }
            v
        })
        .unwrap()
    }

    #[test]
    fn constant_volume_no_detections() {
        let v = FrameVolume::from_fn(36, 48, 48, 25.0, |_, _, _| 0.4).unwrap();
        assert!(detect(&build_integral(&v), &ladder(), 1e-4).is_empty());
    }

    #[test]
    fn empty_ladder_no_detections() {
        let v = blobs(&[(0.8, (24.0, 24.0, 18.0))]);
        let empty = ScaleLadder {
            spatial: vec![],
            temporal: vec![1.0],
        };
        assert!(detect(&build_integral(&v), &empty, 1e-4).is_empty());
    }

    #[test]
    fn single_blob_localized() {
        let v = blobs(&[(0.8, (24.0, 22.0, 17.0))]);
        let pts = detect(&build_integral(&v), &ladder(), 1e-4);
        let top = pts[0];
        assert!((top.x as f64 - 24.0).abs() <= 2.0 && (top.y as f64 - 22.0).abs() <= 2.0);
        assert!((top.t as f64 - 17.0).abs() <= 1.0, "{top:?}");
        for w in pts.windows(2) {
            assert!(w[0].response >= w[1].response);
        }
    }

    #[test]
    fn two_blobs_ordered_by_contrast() {
        let v = blobs(&[(0.4, (12.0, 12.0, 18.0)), (0.8, (34.0, 34.0, 18.0))]);
        let pts = detect(&build_integral(&v), &ladder(), 1e-4);
        assert!(pts.len() >= 2);
        let near = |p: &InterestPoint, c: (usize, usize)| {
            p.x.abs_diff(c.0) <= 2 && p.y.abs_diff(c.1) <= 2 && p.t.abs_diff(18) <= 1
        };
        assert!(near(&pts[0], (34, 34)), "{:?}", pts[0]);
        assert!(near(&pts[1], (12, 12)), "{:?}", pts[1]);
    }
}

//! Box-filter approximations of second-order Gaussian derivatives in
//! `(x, y, t)` and the determinant of the resulting 3x3 Hessian.

use super::integral::IntegralVolume;
use crate::error::{Error, Result};

/// Relative weight applied to the mixed-derivative box responses.
pub const MIXED_WEIGHT: f64 = 0.9;

/// Odd lobe length (in voxels) approximating a Gaussian of scale `sigma`:
/// scale 1.2 maps to the classic 3-voxel lobe of a 9-tap filter.
pub fn lobe_len(sigma: f64) -> usize {
    2 * ((2.5 * sigma / 2.0).floor().max(0.0) as usize) + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterGeometry {
    pub lobe_s: usize,
    pub lobe_t: usize,
}

impl FilterGeometry {
    pub fn new(sigma_s: f64, sigma_t: f64) -> Self {
        FilterGeometry {
            lobe_s: lobe_len(sigma_s),
            lobe_t: lobe_len(sigma_t),
        }
    }

    /// Half-extent of the full filter support along x and y.
    pub fn radius_s(&self) -> usize {
        (3 * self.lobe_s - 1) / 2
    }

    /// Half-extent of the full filter support along t.
    pub fn radius_t(&self) -> usize {
        (3 * self.lobe_t - 1) / 2
    }

    pub fn fits(&self, iv: &IntegralVolume, x: usize, y: usize, t: usize) -> bool {
        let (rs, rt) = (self.radius_s(), self.radius_t());
        x >= rs && x + rs < iv.width() && y >= rs && y + rs < iv.height() && t >= rt && t + rt < iv.frames()
    }
}

/// Area-normalized second-derivative responses at one location and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianComponents {
    pub dxx: f64,
    pub dyy: f64,
    pub dtt: f64,
    pub dxy: f64,
    pub dxt: f64,
    pub dyt: f64,
}

impl HessianComponents {
    pub fn determinant(&self) -> f64 {
        let (a, b, c) = (self.dxx, self.dyy, self.dtt);
        let d = MIXED_WEIGHT * self.dxy;
        let e = MIXED_WEIGHT * self.dxt;
        let f = MIXED_WEIGHT * self.dyt;
        a * b * c + 2.0 * d * e * f - a * f * f - b * e * e - c * d * d
    }
}

type Span = (isize, isize);

fn centred(half: isize) -> Span {
    (-half, half)
}

/// `[+1, -2, +1]` lobe pattern along one axis, expressed as outer span and
/// centre span (outer weight 1, centre weight -3).
fn triple(lobe: usize) -> (Span, Span) {
    let l = lobe as isize;
    let inner = (l - 1) / 2;
    ((-(inner + l), inner + l), (-inner, inner))
}

/// Computes the six components without support checks.
pub(crate) fn components_unchecked(
    iv: &IntegralVolume,
    geom: FilterGeometry,
    x: usize,
    y: usize,
    t: usize,
) -> HessianComponents {
    let at = (t, y, x);
    let ls = geom.lobe_s as isize;
    let lt = geom.lobe_t as isize;
    let cross_s = centred(ls - 1);
    let cross_t = centred(lt - 1);
    let (outer_s, inner_s) = triple(geom.lobe_s);
    let (outer_t, inner_t) = triple(geom.lobe_t);

    let len = |s: Span| (s.1 - s.0 + 1) as f64;

    let dxx = (iv.offset_sum(at, cross_t, cross_s, outer_s)
        - 3.0 * iv.offset_sum(at, cross_t, cross_s, inner_s))
        / (len(cross_t) * len(cross_s) * len(outer_s));
    let dyy = (iv.offset_sum(at, cross_t, outer_s, cross_s)
        - 3.0 * iv.offset_sum(at, cross_t, inner_s, cross_s))
        / (len(cross_t) * len(outer_s) * len(cross_s));
    let dtt = (iv.offset_sum(at, outer_t, cross_s, cross_s)
        - 3.0 * iv.offset_sum(at, inner_t, cross_s, cross_s))
        / (len(outer_t) * len(cross_s) * len(cross_s));

    let pos_s: Span = (1, ls);
    let neg_s: Span = (-ls, -1);
    let pos_t: Span = (1, lt);
    let neg_t: Span = (-lt, -1);

    // Quadrant filters: (+,+) and (-,-) add, mixed-sign quadrants subtract.
    let dxy = (iv.offset_sum(at, cross_t, pos_s, pos_s) + iv.offset_sum(at, cross_t, neg_s, neg_s)
        - iv.offset_sum(at, cross_t, pos_s, neg_s)
        - iv.offset_sum(at, cross_t, neg_s, pos_s))
        / (4.0 * len(pos_s) * len(pos_s) * len(cross_t));
    let dxt = (iv.offset_sum(at, pos_t, cross_s, pos_s) + iv.offset_sum(at, neg_t, cross_s, neg_s)
        - iv.offset_sum(at, pos_t, cross_s, neg_s)
        - iv.offset_sum(at, neg_t, cross_s, pos_s))
        / (4.0 * len(pos_s) * len(pos_t) * len(cross_s));
    let dyt = (iv.offset_sum(at, pos_t, pos_s, cross_s) + iv.offset_sum(at, neg_t, neg_s, cross_s)
        - iv.offset_sum(at, pos_t, neg_s, cross_s)
        - iv.offset_sum(at, neg_t, pos_s, cross_s))
        / (4.0 * len(pos_s) * len(pos_t) * len(cross_s));

    HessianComponents {
        dxx,
        dyy,
        dtt,
        dxy,
        dxt,
        dyt,
    }
}

pub fn hessian_components(
    iv: &IntegralVolume,
    x: usize,
    y: usize,
    t: usize,
    sigma_s: f64,
    sigma_t: f64,
) -> Result<HessianComponents> {
    let geom = FilterGeometry::new(sigma_s, sigma_t);
    if !geom.fits(iv, x, y, t) {
        return Err(Error::OutOfSupport {
            x,
            y,
            t,
            sigma_s,
            sigma_t,
        });
    }
    Ok(components_unchecked(iv, geom, x, y, t))
}

/// Signed determinant of the box-approximated space-time Hessian.
pub fn hessian_response(
    iv: &IntegralVolume,
    x: usize,
    y: usize,
    t: usize,
    sigma_s: f64,
    sigma_t: f64,
) -> Result<f64> {
    hessian_components(iv, x, y, t, sigma_s, sigma_t).map(|c| c.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::integral::build_integral;
    use crate::video::volume::FrameVolume;

    fn blob(contrast: f64, c: (f64, f64, f64)) -> FrameVolume {
        FrameVolume::from_fn(24, 40, 40, 25.0, |t, y, x| {
            let dx = x as f64 - c.0;
            let dy = y as f64 - c.1;
            let dt = t as f64 - c.2;
            0.1 + contrast * (-(dx * dx + dy * dy) / (2.0 * 9.0) - dt * dt / (2.0 * 4.0)).exp()
        })
        .unwrap()
    }

    #[test]
    fn lobe_lengths() {
        assert_eq!(lobe_len(1.2), 3);
        assert_eq!(lobe_len(2.4), 7);
        assert_eq!(lobe_len(4.8), 13);
        assert_eq!(lobe_len(1.0), 3);
        assert_eq!(lobe_len(2.0), 5);
        assert_eq!(lobe_len(4.0), 11);
    }

    #[test]
    fn constant_volume_has_zero_response() {
        let v = FrameVolume::from_fn(20, 32, 32, 25.0, |_, _, _| 0.37).unwrap();
        let iv = build_integral(&v);
        for (x, y, t) in [(16, 16, 10), (12, 20, 8), (20, 12, 11)] {
            let r = hessian_response(&iv, x, y, t, 1.2, 1.0).unwrap();
            assert!(r.abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn out_of_support_is_error() {
        let v = FrameVolume::from_fn(20, 32, 32, 25.0, |_, _, _| 0.5).unwrap();
        let iv = build_integral(&v);
        assert!(matches!(
            hessian_response(&iv, 1, 16, 10, 1.2, 1.0),
            Err(Error::OutOfSupport { .. })
        ));
    }

    #[test]
    fn blob_centre_maximizes_magnitude() {
        let v = blob(0.8, (20.0, 20.0, 12.0));
        let iv = build_integral(&v);
        let centre = hessian_response(&iv, 20, 20, 12, 2.4, 2.0).unwrap().abs();
        for dt in -2i32..=2 {
            for dy in -2i32..=2 {
                for dx in -2i32..=2 {
                    if (dx, dy, dt) == (0, 0, 0) {
                        continue;
                    }
                    let r = hessian_response(
                        &iv,
                        (20 + dx) as usize,
                        (20 + dy) as usize,
                        (12 + dt) as usize,
                        2.4,
                        2.0,
                    )
                    .unwrap()
                    .abs();
                    assert!(r < centre, "({dx},{dy},{dt}) {r} >= {centre}");
                }
            }
        }
    }

    #[test]
    fn response_is_cubic_in_contrast() {
        let a = hessian_response(&build_integral(&blob(0.4, (20.0, 20.0, 12.0))), 20, 20, 12, 2.4, 2.0)
            .unwrap();
        let b = hessian_response(&build_integral(&blob(0.8, (20.0, 20.0, 12.0))), 20, 20, 12, 2.4, 2.0)
            .unwrap();
        assert!((b / a - 8.0).abs() < 1e-6, "ratio {}", b / a);
    }

    #[test]
    fn isotropic_blob_mixed_terms_small() {
        let v = blob(0.8, (20.0, 20.0, 12.0));
        let c = hessian_components(&build_integral(&v), 20, 20, 12, 2.4, 2.0).unwrap();
        let max_pure = c.dxx.abs().max(c.dyy.abs()).max(c.dtt.abs());
        for m in [c.dxy, c.dxt, c.dyt] {
            assert!(m.abs() < 0.1 * max_pure);
        }
    }
}

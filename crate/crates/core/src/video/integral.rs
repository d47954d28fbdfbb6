use super::volume::FrameVolume;

/// Summed-volume table with a zero guard plane on each axis, so
/// `table[(t, y, x)]` holds the sum over `[0, t) x [0, y) x [0, x)`.
#[derive(Debug, Clone)]
pub struct IntegralVolume {
    frames: usize,
    height: usize,
    width: usize,
    table: Vec<f64>,
}

impl IntegralVolume {
    pub fn new(volume: &FrameVolume) -> Self {
        let (t_n, h_n, w_n) = (volume.frames(), volume.height(), volume.width());
        let (h1, w1) = (h_n + 1, w_n + 1);
        let mut table = vec![0.0; (t_n + 1) * h1 * w1];
        let idx = |t: usize, y: usize, x: usize| (t * h1 + y) * w1 + x;
        for t in 0..t_n {
            for y in 0..h_n {
                let mut row = 0.0;
                for x in 0..w_n {
                    row += volume.get(t, y, x);
                    // Sum of the row prefix, the plane above and the previous
                    // frame, minus their shared overlap.
                    table[idx(t + 1, y + 1, x + 1)] = row + table[idx(t + 1, y, x + 1)]
                        + table[idx(t, y + 1, x + 1)]
                        - table[idx(t, y, x + 1)];
                }
            }
        }
        IntegralVolume {
            frames: t_n,
            height: h_n,
            width: w_n,
            table,
        }
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

    #[inline]
    fn at(&self, t: usize, y: usize, x: usize) -> f64 {
        self.table[(t * (self.height + 1) + y) * (self.width + 1) + x]
    }

    /// Sum over the half-open box `[t0, t1) x [y0, y1) x [x0, x1)`. Empty or
    /// inverted ranges sum to zero; bounds are clamped to the volume.
    pub fn box_sum(&self, t: (usize, usize), y: (usize, usize), x: (usize, usize)) -> f64 {
        let (t0, t1) = (t.0.min(self.frames), t.1.min(self.frames));
        let (y0, y1) = (y.0.min(self.height), y.1.min(self.height));
        let (x0, x1) = (x.0.min(self.width), x.1.min(self.width));
        if t0 >= t1 || y0 >= y1 || x0 >= x1 {
            return 0.0;
        }
        self.at(t1, y1, x1) - self.at(t0, y1, x1) - self.at(t1, y0, x1) - self.at(t1, y1, x0)
            + self.at(t0, y0, x1)
            + self.at(t0, y1, x0)
            + self.at(t1, y0, x0)
            - self.at(t0, y0, x0)
    }

    /// Sum over the inclusive box centred at `(t, y, x)` with signed offsets
    /// `dt`, `dy`, `dx` (each an inclusive `(lo, hi)` pair). The caller must
    /// ensure the box lies inside the volume.
    #[inline]
    pub(crate) fn offset_sum(
        &self,
        (t, y, x): (usize, usize, usize),
        dt: (isize, isize),
        dy: (isize, isize),
        dx: (isize, isize),
    ) -> f64 {
        let r = |c: usize, (lo, hi): (isize, isize)| {
            ((c as isize + lo) as usize, (c as isize + hi + 1) as usize)
        };
        let (t0, t1) = r(t, dt);
        let (y0, y1) = r(y, dy);
        let (x0, x1) = r(x, dx);
        self.at(t1, y1, x1) - self.at(t0, y1, x1) - self.at(t1, y0, x1) - self.at(t1, y1, x0)
            + self.at(t0, y0, x1)
            + self.at(t0, y1, x0)
            + self.at(t1, y0, x0)
            - self.at(t0, y0, x0)
    }
}

pub fn build_integral(volume: &FrameVolume) -> IntegralVolume {
    IntegralVolume::new(volume)
}

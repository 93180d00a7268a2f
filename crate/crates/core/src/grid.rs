use crate::error::{Error, Result};

/// Doubly periodic square grid. Node `(iy, ix)` sits at `(ix * dx, iy * dx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n: usize,
    length: f64,
}

pub const DOMAIN_LENGTH: f64 = 1.0e6;

impl GridSpec {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::config(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config(format!("domain length must be positive, got {length}")));
        }
        Ok(Self { n, length })
    }

    /// Square grid over the default 1000 km domain.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, DOMAIN_LENGTH)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Gridpoints per layer.
    #[inline]
    pub fn points(&self) -> usize {
        self.n * self.n
    }

    /// Length of a two-layer state vector.
    #[inline]
    pub fn state_len(&self) -> usize {
        2 * self.points()
    }

    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    #[inline]
    pub fn index(&self, iy: usize, ix: usize) -> usize {
        iy * self.n + ix
    }

    #[inline]
    pub fn coords(&self, point: usize) -> (usize, usize) {
        (point / self.n, point % self.n)
    }

    /// Point reached from `point` by an offset in grid units, with wrap.
    #[inline]
    pub fn shifted(&self, point: usize, dy: isize, dx: isize) -> usize {
        let (iy, ix) = self.coords(point);
        self.index(self.wrap(iy as isize + dy), self.wrap(ix as isize + dx))
    }

    /// Minimum-image offset along one axis, in `[-n/2, n/2)`.
    #[inline]
    pub fn min_image(&self, d: isize) -> isize {
        let n = self.n as isize;
        let r = d.rem_euclid(n);
        if r >= n / 2 {
            r - n
        } else {
            r
        }
    }

    /// Minimum-image offset `(dy, dx)` from `a` to `b`.
    pub fn offset(&self, a: usize, b: usize) -> (isize, isize) {
        let (ay, ax) = self.coords(a);
        let (by, bx) = self.coords(b);
        (
            self.min_image(by as isize - ay as isize),
            self.min_image(bx as isize - ax as isize),
        )
    }

    /// Periodic distance in meters between two gridpoints.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (dy, dx) = self.offset(a, b);
        self.dx() * ((dy * dy + dx * dx) as f64).sqrt()
    }

    pub fn same_domain(&self, other: &GridSpec) -> bool {
        (self.length - other.length).abs() <= 1e-9 * self.length
    }
}

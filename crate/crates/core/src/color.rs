//! Plain RGB triples in linear light.
//!
//! [`Rgb`] doubles as a signed 3-vector: differences and directions orthogonal
//! to the illuminant routinely carry negative components.

use core::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rgb(pub [f64; 3]);

impl Rgb {
    pub const ZERO: Rgb = Rgb([0.0; 3]);

    #[inline]
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Rgb([r, g, b])
    }

    #[inline]
    pub const fn splat(v: f64) -> Self {
        Rgb([v; 3])
    }

    #[inline]
    pub fn r(self) -> f64 {
        self.0[0]
    }

    #[inline]
    pub fn g(self) -> f64 {
        self.0[1]
    }

    #[inline]
    pub fn b(self) -> f64 {
        self.0[2]
    }

    #[inline]
    pub fn dot(self, other: Rgb) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_squared())
    }

    #[inline]
    pub fn max_component(self) -> f64 {
        self.0[0].max(self.0[1]).max(self.0[2])
    }

    #[inline]
    pub fn min_component(self) -> f64 {
        self.0[0].min(self.0[1]).min(self.0[2])
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    #[inline]
    pub fn map(self, mut f: impl FnMut(f64) -> f64) -> Rgb {
        Rgb([f(self.0[0]), f(self.0[1]), f(self.0[2])])
    }

    #[inline]
    pub fn zip_map(self, other: Rgb, mut f: impl FnMut(f64, f64) -> f64) -> Rgb {
        Rgb([
            f(self.0[0], other.0[0]),
            f(self.0[1], other.0[1]),
            f(self.0[2], other.0[2]),
        ])
    }

    /// Largest absolute per-channel difference.
    pub fn max_abs_diff(self, other: Rgb) -> f64 {
        let d = self - other;
        libm::fabs(d.0[0]).max(libm::fabs(d.0[1])).max(libm::fabs(d.0[2]))
    }
}

impl Add for Rgb {
    type Output = Rgb;
    #[inline]
    fn add(self, rhs: Rgb) -> Rgb {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl AddAssign for Rgb {
    #[inline]
    fn add_assign(&mut self, rhs: Rgb) {
        *self = *self + rhs;
    }
}

impl Sub for Rgb {
    type Output = Rgb;
    #[inline]
    fn sub(self, rhs: Rgb) -> Rgb {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl SubAssign for Rgb {
    #[inline]
    fn sub_assign(&mut self, rhs: Rgb) {
        *self = *self - rhs;
    }
}

impl Mul<f64> for Rgb {
    type Output = Rgb;
    #[inline]
    fn mul(self, k: f64) -> Rgb {
        self.map(|c| c * k)
    }
}

impl Mul<Rgb> for f64 {
    type Output = Rgb;
    #[inline]
    fn mul(self, v: Rgb) -> Rgb {
        v * self
    }
}

impl Neg for Rgb {
    type Output = Rgb;
    #[inline]
    fn neg(self) -> Rgb {
        self.map(|c| -c)
    }
}

impl Index<usize> for Rgb {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<[f64; 3]> for Rgb {
    fn from(v: [f64; 3]) -> Self {
        Rgb(v)
    }
}

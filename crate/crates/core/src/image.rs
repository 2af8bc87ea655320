use alloc::vec;
use alloc::vec::Vec;

use crate::color::Rgb;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("pixel buffer holds {got} pixels but {width}x{height} needs {expected}")]
pub struct BufferSizeError {
    pub width: usize,
    pub height: usize,
    pub expected: usize,
    pub got: usize,
}

/// Row-major RGB image in linear light, normalized so full scale is 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, BufferSizeError> {
        let expected = width * height;
        if pixels.len() != expected {
            return Err(BufferSizeError {
                width,
                height,
                expected,
                got: pixels.len(),
            });
        }
        Ok(LinearImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        LinearImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        LinearImage {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn same_dimensions(&self, other: &LinearImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: Rgb) {
        self.pixels[y * self.width + x] = value;
    }

    /// Largest channel value anywhere in the image (0 for an empty image).
    pub fn max_value(&self) -> f64 {
        self.pixels
            .iter()
            .fold(0.0_f64, |m, p| m.max(p.max_component()))
    }
}

//! PPM (binary P6, 8 or 16 bit) and PFM image files.
//!
//! Integer samples are scaled by `1/maxval` on load and quantized with round
//! half up on save. Float samples are taken verbatim. All data is assumed to
//! be linear light; [`decode_gamma`] is a lossy convenience for
//! gamma-encoded sources.

use std::fs;
use std::io;
use std::path::Path;

use unglare_core::{LinearImage, Rgb};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated data: expected {expected} bytes, found {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ppm8,
    Ppm16,
    Pfm,
}

impl Format {
    /// `.pfm` maps to PFM and `.ppm` to 16-bit PPM.
    pub fn from_path(path: &Path) -> Option<Format> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pfm" => Some(Format::Pfm),
            "ppm" => Some(Format::Ppm16),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppm8" => Ok(Format::Ppm8),
            "ppm16" => Ok(Format::Ppm16),
            "pfm" => Ok(Format::Pfm),
            other => Err(ImageError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Outcome of an encode: how many samples fell outside `[0, 1]` and were
/// clipped by integer quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaveReport {
    pub clipped: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::CorruptHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| ImageError::CorruptHeader(format!("non-ascii {what}")))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ImageError> {
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| ImageError::CorruptHeader(format!("bad {what} `{tok}`")))
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end_header(&mut self) -> Result<usize, ImageError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(ImageError::CorruptHeader("header not terminated".into())),
        }
    }
}

fn dimensions(c: &mut Cursor) -> Result<(usize, usize), ImageError> {
    let width: usize = c.number("width")?;
    let height: usize = c.number("height")?;
    if width == 0 || height == 0 {
        return Err(ImageError::CorruptHeader("zero dimension".into()));
    }
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(12))
        .ok_or_else(|| ImageError::CorruptHeader("dimensions overflow".into()))?;
    Ok((width, height))
}

fn payload(bytes: &[u8], start: usize, expected: usize) -> Result<&[u8], ImageError> {
    let got = bytes.len().saturating_sub(start);
    if got < expected {
        return Err(ImageError::TruncatedData { expected, got });
    }
    Ok(&bytes[start..start + expected])
}

/// Decodes a PPM (P6) or PFM (PF / Pf) byte stream.
pub fn decode(bytes: &[u8]) -> Result<LinearImage, ImageError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.token("magic number")?;
    match magic {
        "P6" => decode_ppm(&mut c),
        "PF" => decode_pfm(&mut c, 3),
        "Pf" => decode_pfm(&mut c, 1),
        other => Err(ImageError::UnsupportedFormat(format!("magic `{other}`"))),
    }
}

fn decode_ppm(c: &mut Cursor) -> Result<LinearImage, ImageError> {
    let (width, height) = dimensions(c)?;
    let maxval: u32 = c.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(ImageError::CorruptHeader(format!("maxval {maxval}")));
    }
    let start = c.end_header()?;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let data = payload(c.bytes, start, width * height * 3 * bytes_per)?;
    let scale = 1.0 / maxval as f64;
    let sample = |i: usize| -> f64 {
        let v = if bytes_per == 2 {
            u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as u32
        } else {
            data[i] as u32
        };
        v as f64 * scale
    };
    let pixels = (0..width * height)
        .map(|p| Rgb::new(sample(3 * p), sample(3 * p + 1), sample(3 * p + 2)))
        .collect();
    Ok(LinearImage::new(width, height, pixels).expect("dimensions"))
}

fn decode_pfm(c: &mut Cursor, channels: usize) -> Result<LinearImage, ImageError> {
    let (width, height) = dimensions(c)?;
    let scale: f32 = c.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(ImageError::CorruptHeader(format!("scale {scale}")));
    }
    let little = scale < 0.0;
    let start = c.end_header()?;
    let data = payload(c.bytes, start, width * height * channels * 4)?;
    let sample = |i: usize| -> f64 {
        let b = [data[4 * i], data[4 * i + 1], data[4 * i + 2], data[4 * i + 3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        v as f64
    };
    let mut pixels = vec![Rgb::ZERO; width * height];
    // Rows are stored bottom to top.
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let i = (row * width + x) * channels;
            pixels[y * width + x] = if channels == 3 {
                Rgb::new(sample(i), sample(i + 1), sample(i + 2))
            } else {
                Rgb::splat(sample(i))
            };
        }
    }
    Ok(LinearImage::new(width, height, pixels).expect("dimensions"))
}

/// Round half up to `0..=maxval`, counting clipped samples.
fn quantize(v: f64, maxval: u32, clipped: &mut usize) -> u32 {
    let scaled = v * maxval as f64;
    if !(0.0..=maxval as f64).contains(&scaled) {
        *clipped += 1;
    }
    if scaled.is_nan() {
        return 0;
    }
    (scaled + 0.5).floor().clamp(0.0, maxval as f64) as u32
}

pub fn encode(img: &LinearImage, format: Format) -> (Vec<u8>, SaveReport) {
    let (w, h) = (img.width(), img.height());
    let mut report = SaveReport::default();
    let bytes = match format {
        Format::Ppm8 | Format::Ppm16 => {
            let maxval = if format == Format::Ppm8 { 255 } else { 65535 };
            let mut out = format!("P6\n{w} {h}\n{maxval}\n").into_bytes();
            for p in img.pixels() {
                for ch in 0..3 {
                    let q = quantize(p[ch], maxval, &mut report.clipped);
                    if maxval == 255 {
                        out.push(q as u8);
                    } else {
                        out.extend_from_slice(&(q as u16).to_be_bytes());
                    }
                }
            }
            out
        }
        Format::Pfm => {
            let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
            for y in (0..h).rev() {
                for x in 0..w {
                    let p = img.get(x, y);
                    for ch in 0..3 {
                        out.extend_from_slice(&(p[ch] as f32).to_le_bytes());
                    }
                }
            }
            out
        }
    };
    (bytes, report)
}

fn io_error(path: &Path, source: io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load(path: &Path) -> Result<LinearImage, ImageError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    decode(&bytes)
}

pub fn save(img: &LinearImage, path: &Path, format: Format) -> Result<SaveReport, ImageError> {
    let (bytes, report) = encode(img, format);
    fs::write(path, bytes).map_err(|e| io_error(path, e))?;
    Ok(report)
}

/// Writes an 8-bit gray label map as a P6 file with equal channels.
pub fn save_labels(levels: &[u8], width: usize, height: usize, path: &Path) -> Result<(), ImageError> {
    assert_eq!(levels.len(), width * height, "label map size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &l in levels {
        out.extend_from_slice(&[l, l, l]);
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Reads a label map written by [`save_labels`]; only the red channel is
/// used. Returns `(width, height, levels)`.
pub fn load_labels(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.token("magic number")? != "P6" {
        return Err(ImageError::UnsupportedFormat("label maps must be P6".into()));
    }
    let (width, height) = dimensions(&mut c)?;
    let maxval: u32 = c.number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat("label maps must be 8-bit".into()));
    }
    let start = c.end_header()?;
    let data = payload(&bytes, start, width * height * 3)?;
    Ok((width, height, data.chunks_exact(3).map(|p| p[0]).collect()))
}

/// Converts gamma-encoded values to linear light with a pure power law.
/// Lossy for integer sources; linear inputs must not go through this.
pub fn decode_gamma(img: &LinearImage, gamma: f64) -> LinearImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|p| p.map(|v| v.max(0.0).powf(gamma)))
        .collect();
    LinearImage::new(img.width(), img.height(), pixels).expect("dimensions")
}

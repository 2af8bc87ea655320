//! Synthetic dichromatic scenes with exact ground truth.
//!
//! A scene is described parametrically: a material layout, one body color per
//! material, a smooth diffuse shading term and a set of isotropic Gaussian
//! specular lobes. Lobes are truncated at three standard deviations so every
//! pixel outside them is exactly pure diffuse. All positions and sizes are
//! fractions of the image, so the same spec renders at any resolution.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::color::Rgb;
use crate::image::LinearImage;
use crate::model::{l2_chromaticity, Chromaticity};
use crate::par;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
}

fn invalid(msg: &str) -> SynthError {
    SynthError::InvalidSpec(String::from(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Material 0 everywhere.
    Single,
    /// Materials 0..4 in the top-left, top-right, bottom-left, bottom-right
    /// quadrants.
    Quadrants,
    /// One vertical band per material, left to right.
    Columns,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialSpec {
    pub chroma: Chromaticity,
    /// Total rotation of the body color about the illuminant axis from the
    /// top to the bottom of the image, in degrees. Rotation about `Γ` keeps
    /// `Λ·Γ` fixed, so the material stays a single saturation.
    pub hue_spread_deg: f64,
}

impl MaterialSpec {
    pub fn plain(chroma: Chromaticity) -> Self {
        MaterialSpec {
            chroma,
            hue_spread_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lobe {
    /// Center as fractions of width and height.
    pub cx: f64,
    pub cy: f64,
    /// Standard deviation as a fraction of `min(width, height)`.
    pub sigma: f64,
    /// Specular magnitude at the center.
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub illumination: Chromaticity,
    pub layout: Layout,
    pub materials: Vec<MaterialSpec>,
    /// Diffuse magnitude at the image center.
    pub diffuse: f64,
    /// Fractional darkening of the diffuse magnitude toward the corners.
    pub shading: f64,
    pub lobes: Vec<Lobe>,
    /// Require every material to keep at least one lobe-free pixel.
    pub pddr_valid: bool,
}

impl SceneSpec {
    pub fn with_size(&self, width: usize, height: usize) -> SceneSpec {
        SceneSpec {
            width,
            height,
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: usize) -> SceneSpec {
        self.with_size(self.width * factor, self.height * factor)
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("empty image"));
        }
        let needed = match self.layout {
            Layout::Single => 1,
            Layout::Quadrants => 4,
            Layout::Columns => self.materials.len().max(1),
        };
        if self.materials.len() != needed {
            return Err(invalid("material count does not match the layout"));
        }
        if !(self.diffuse.is_finite() && self.diffuse >= 0.0) {
            return Err(invalid("negative diffuse magnitude"));
        }
        if !(0.0..1.0).contains(&self.shading) {
            return Err(invalid("shading must lie in [0, 1)"));
        }
        for l in &self.lobes {
            if !(l.peak.is_finite() && l.peak >= 0.0) {
                return Err(invalid("negative specular magnitude"));
            }
            if !(l.sigma.is_finite() && l.sigma > 0.0) {
                return Err(invalid("lobe width must be positive"));
            }
            if !(l.cx.is_finite() && l.cy.is_finite()) {
                return Err(invalid("lobe center must be finite"));
            }
        }
        for m in &self.materials {
            if !m.hue_spread_deg.is_finite() {
                return Err(invalid("hue spread must be finite"));
            }
        }
        for c in self
            .materials
            .iter()
            .map(|m| m.chroma)
            .chain(core::iter::once(self.illumination))
        {
            let v = c.rgb();
            if libm::fabs(v.norm() - 1.0) > 1e-9 || v.min_component() < 0.0 {
                return Err(invalid("chromaticities must be unit and nonnegative"));
            }
        }
        Ok(())
    }

    fn material_at(&self, x: usize, y: usize) -> usize {
        match self.layout {
            Layout::Single => 0,
            Layout::Quadrants => {
                let right = 2 * x >= self.width;
                let bottom = 2 * y >= self.height;
                (bottom as usize) * 2 + right as usize
            }
            Layout::Columns => (x * self.materials.len()) / self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub input: LinearImage,
    pub diffuse: LinearImage,
    pub specular: LinearImage,
    /// Material index per pixel.
    pub labels: Vec<u32>,
    /// `m_d(x)`: `diffuse = m_d·Λ`.
    pub diffuse_magnitude: Vec<f64>,
    /// `m_s(x)`: `specular = m_s·Γ`.
    pub specular_magnitude: Vec<f64>,
}

#[inline]
fn cross(a: Rgb, b: Rgb) -> Rgb {
    Rgb::new(
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
}

/// Rodrigues rotation of `v` about the unit axis `k`.
fn rotate_about(v: Rgb, k: Rgb, angle: f64) -> Rgb {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    v * c + cross(k, v) * s + k * (k.dot(v) * (1.0 - c))
}

struct PixelTruth {
    label: u32,
    m_d: f64,
    m_s: f64,
    body: Rgb,
}

pub fn render(spec: &SceneSpec) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let min_dim = w.min(h) as f64;
    let gamma = spec.illumination.rgb();

    let truth: Vec<PixelTruth> = par::map_range(w * h, |i| {
        let (x, y) = (i % w, i / w);
        let u = (x as f64 + 0.5) / w as f64;
        let v = (y as f64 + 0.5) / h as f64;
        let m = spec.material_at(x, y);
        let mat = &spec.materials[m];
        let body = if mat.hue_spread_deg != 0.0 {
            let angle = mat.hue_spread_deg.to_radians() * (v - 0.5);
            rotate_about(mat.chroma.rgb(), gamma, angle)
        } else {
            mat.chroma.rgb()
        };
        let r2 = ((u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5)) * 2.0;
        let m_d = spec.diffuse * (1.0 - spec.shading * r2);
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let m_s = spec
            .lobes
            .iter()
            .map(|l| {
                let sigma = l.sigma * min_dim;
                let dx = px - l.cx * w as f64;
                let dy = py - l.cy * h as f64;
                let d2 = dx * dx + dy * dy;
                if d2 > 9.0 * sigma * sigma {
                    0.0
                } else {
                    l.peak * libm::exp(-d2 / (2.0 * sigma * sigma))
                }
            })
            .sum::<f64>();
        PixelTruth {
            label: m as u32,
            m_d,
            m_s,
            body,
        }
    });

    if truth.iter().any(|t| t.body.min_component() < 0.0) {
        return Err(invalid("hue spread rotates a body color out of the nonnegative octant"));
    }
    if spec.pddr_valid {
        for m in 0..spec.materials.len() as u32 {
            if !truth.iter().any(|t| t.label == m && t.m_s == 0.0) {
                return Err(invalid("a material has no lobe-free pixel"));
            }
        }
    }

    let diffuse: Vec<Rgb> = truth.iter().map(|t| t.body * t.m_d).collect();
    let specular: Vec<Rgb> = truth.iter().map(|t| gamma * t.m_s).collect();
    let input: Vec<Rgb> = diffuse.iter().zip(&specular).map(|(d, s)| *d + *s).collect();
    let mk = |p| LinearImage::new(w, h, p).expect("dimensions");
    Ok(GroundTruth {
        input: mk(input),
        diffuse: mk(diffuse),
        specular: mk(specular),
        labels: truth.iter().map(|t| t.label).collect(),
        diffuse_magnitude: truth.iter().map(|t| t.m_d).collect(),
        specular_magnitude: truth.iter().map(|t| t.m_s).collect(),
    })
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma / 255` per
/// channel and clips at zero. Each row draws from its own ChaCha stream, so
/// the result depends only on `seed`.
pub fn add_noise(img: &LinearImage, sigma: f64, seed: u64) -> LinearImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let std = sigma / 255.0;
    let w = img.width();
    let rows: Vec<Vec<Rgb>> = par::map_range(img.height(), |y| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(y as u64);
        img.pixels()[y * w..(y + 1) * w]
            .iter()
            .map(|p| {
                p.map(|c| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    (c + std * n).max(0.0)
                })
            })
            .collect()
    });
    LinearImage::new(w, img.height(), rows.concat()).expect("dimensions")
}

pub const BUILTIN_SCENES: [&str; 5] = [
    "single-1",
    "single-2",
    "single-3",
    "four-materials",
    "over-seg",
];

fn chroma(r: f64, g: f64, b: f64) -> Chromaticity {
    l2_chromaticity(Rgb::new(r, g, b)).expect("valid builtin color")
}

fn lobe(cx: f64, cy: f64, sigma: f64, peak: f64) -> Lobe {
    Lobe { cx, cy, sigma, peak }
}

pub fn builtin_scene(name: &str) -> Result<SceneSpec, SynthError> {
    let white = Chromaticity::white();
    let single = |name: &str, c: Chromaticity| SceneSpec {
        name: String::from(name),
        width: 400,
        height: 300,
        illumination: white,
        layout: Layout::Single,
        materials: alloc::vec![MaterialSpec::plain(c)],
        diffuse: 0.6,
        shading: 0.3,
        lobes: alloc::vec![lobe(0.45, 0.45, 0.12, 0.5)],
        pddr_valid: true,
    };
    let spec = match name {
        "single-1" => single(name, chroma(0.7053, 0.7053, 0.0705)),
        "single-2" => single(name, chroma(0.6667, 0.6667, 0.3333)),
        "single-3" => single(name, chroma(0.5965, 0.5965, 0.5369)),
        "four-materials" => SceneSpec {
            name: String::from(name),
            width: 650,
            height: 450,
            illumination: white,
            layout: Layout::Quadrants,
            materials: alloc::vec![
                MaterialSpec::plain(chroma(0.972, 0.229, 0.06)),
                MaterialSpec::plain(chroma(0.362, 0.930, 0.06)),
                MaterialSpec::plain(chroma(0.06, 0.637, 0.768)),
                MaterialSpec::plain(chroma(0.560, 0.06, 0.826)),
            ],
            diffuse: 0.55,
            shading: 0.25,
            lobes: alloc::vec![
                lobe(0.25, 0.25, 0.07, 0.45),
                lobe(0.72, 0.27, 0.06, 0.35),
                lobe(0.27, 0.74, 0.065, 0.5),
                lobe(0.75, 0.75, 0.07, 0.4),
            ],
            pddr_valid: true,
        },
        "over-seg" => SceneSpec {
            name: String::from(name),
            width: 650,
            height: 450,
            illumination: white,
            layout: Layout::Columns,
            materials: alloc::vec![
                MaterialSpec::plain(chroma(0.972, 0.229, 0.06)),
                MaterialSpec::plain(chroma(0.543, 0.837, 0.06)),
                MaterialSpec::plain(chroma(0.06, 0.859, 0.508)),
                MaterialSpec {
                    chroma: chroma(0.16, 0.33, 0.93),
                    hue_spread_deg: 14.0,
                },
                MaterialSpec::plain(chroma(0.693, 0.06, 0.719)),
            ],
            diffuse: 0.55,
            shading: 0.2,
            lobes: alloc::vec![
                lobe(0.1, 0.5, 0.04, 0.45),
                lobe(0.3, 0.35, 0.04, 0.4),
                lobe(0.5, 0.6, 0.04, 0.5),
                lobe(0.7, 0.45, 0.04, 0.45),
                lobe(0.9, 0.55, 0.04, 0.35),
            ],
            pddr_valid: true,
        },
        _ => return Err(SynthError::UnknownScene(String::from(name))),
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(m_s: f64) -> SceneSpec {
        SceneSpec {
            name: "tiny".into(),
            width: 1,
            height: 1,
            illumination: Chromaticity::white(),
            layout: Layout::Single,
            materials: alloc::vec![MaterialSpec::plain(chroma(2.0, 2.0, 1.0))],
            diffuse: 0.6,
            shading: 0.0,
            lobes: alloc::vec![lobe(0.5, 0.5, 1.0, m_s)],
            pddr_valid: false,
        }
    }

    #[test]
    fn single_pixel_composition() {
        let gt = render(&tiny(0.2)).unwrap();
        // 0.6·(2,2,1)/3 + 0.2/√3
        let expected = Rgb::new(0.4, 0.4, 0.2) + Rgb::splat(0.2 / 3f64.sqrt());
        assert!(gt.input.pixels()[0].max_abs_diff(expected) < 1e-15);
        assert!(gt.input.pixels()[0].max_abs_diff(Rgb::new(0.5155, 0.5155, 0.3155)) < 1e-4);
    }

    #[test]
    fn zero_specular_means_input_is_diffuse() {
        let gt = render(&tiny(0.0)).unwrap();
        assert_eq!(gt.input, gt.diffuse);
        assert_eq!(gt.specular.max_value(), 0.0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = tiny(-0.1);
        assert!(matches!(render(&s), Err(SynthError::InvalidSpec(_))));
        s = tiny(0.1);
        s.diffuse = -1.0;
        assert!(matches!(render(&s), Err(SynthError::InvalidSpec(_))));
        s = tiny(0.1);
        s.layout = Layout::Quadrants;
        assert!(matches!(render(&s), Err(SynthError::InvalidSpec(_))));
        s = tiny(0.1);
        s.pddr_valid = true;
        assert!(matches!(render(&s), Err(SynthError::InvalidSpec(_))));
        assert!(matches!(builtin_scene("nope"), Err(SynthError::UnknownScene(_))));
    }

    #[test]
    fn builtin_chromaticities() {
        let s3 = builtin_scene("single-3").unwrap();
        assert!(s3.materials[0].chroma.rgb().max_abs_diff(Rgb::new(0.5965, 0.5965, 0.5369)) < 1e-4);
        let s2 = builtin_scene("single-2").unwrap();
        assert!(s2.materials[0].chroma.rgb().max_abs_diff(Rgb::new(0.6667, 0.6667, 0.3333)) < 1e-4);
        let s1 = builtin_scene("single-1").unwrap();
        assert!(s1.materials[0].chroma.rgb().max_abs_diff(Rgb::new(0.7053, 0.7053, 0.0705)) < 1e-4);
    }

    #[test]
    fn builtins_render_and_keep_diffuse_margins() {
        for name in BUILTIN_SCENES {
            let spec = builtin_scene(name).unwrap().with_size(130, 90);
            let gt = render(&spec).unwrap();
            for (i, (d, s)) in gt.diffuse.pixels().iter().zip(gt.specular.pixels()).enumerate() {
                assert_eq!(gt.input.pixels()[i], *d + *s);
            }
        }
        let spec = builtin_scene("four-materials").unwrap();
        let gt = render(&spec).unwrap();
        let mut distinct = alloc::vec![];
        for (l, m_s) in gt.labels.iter().zip(&gt.specular_magnitude) {
            if *m_s == 0.0 && !distinct.contains(l) {
                distinct.push(*l);
            }
        }
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn noise_statistics() {
        let img = LinearImage::filled(400, 250, Rgb::splat(0.5));
        assert_eq!(add_noise(&img, 0.0, 1), img);
        let noisy = add_noise(&img, 3.0, 42);
        let target = 3.0 / 255.0;
        for ch in 0..3 {
            let diffs: alloc::vec::Vec<f64> =
                noisy.pixels().iter().map(|p| p[ch] - 0.5).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (diffs.len() - 1) as f64;
            let sd = var.sqrt();
            assert!((sd / target - 1.0).abs() < 0.05, "channel {ch}: {sd}");
        }
        assert_eq!(add_noise(&img, 3.0, 42), noisy);
        assert_ne!(add_noise(&img, 3.0, 43), noisy);
    }
}

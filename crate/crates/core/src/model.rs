//! L2-normalized dichromatic model.
//!
//! A pixel is `I = m_d·Λ + m_s·Γ` with unit body color `Λ` and unit
//! illuminant `Γ`. Dividing by `‖I‖₂` gives `Ĩ = α·Λ + β·Γ`. Splitting `Λ`
//! into `a·Γ⊥ + b·Γ` with `Γ⊥ ⟂ Γ` turns this into
//! `Ĩ = γ⊥·Γ⊥ + γ·Γ` where `γ⊥ = α·a` and `γ = α·b + β`, and because all
//! three vectors are unit length the coefficients satisfy `γ⊥² + γ² = 1`.
//! `Γ⊥` depends on the body color only, which is what makes it usable for
//! specular-free material clustering.

use crate::color::Rgb;
use crate::image::LinearImage;
use crate::par;

/// Pixels whose L2 norm is at or below this carry no chromatic information.
pub const EPS_BLACK: f64 = 1e-6;

/// Body colors whose orthogonal residue is at or below this are treated as
/// parallel to the illuminant.
pub const EPS_GRAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("pixel norm {norm:e} is below the black threshold")]
    BlackPixel { norm: f64 },
    #[error("color has a negative or non-finite component")]
    InvalidColor,
    #[error("color is parallel to the illuminant (orthogonal residue {residue:e})")]
    AchromaticColor { residue: f64 },
    #[error("illuminant components must all be positive")]
    InvalidIlluminant,
}

/// A unit-length, componentwise nonnegative color direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chromaticity(Rgb);

impl Chromaticity {
    /// `(1, 1, 1) / √3`.
    pub fn white() -> Self {
        Chromaticity(Rgb::splat(1.0 / libm::sqrt(3.0)))
    }

    #[inline]
    pub fn rgb(self) -> Rgb {
        self.0
    }
}

/// L2 chromaticity `v / ‖v‖₂`.
pub fn l2_chromaticity(v: Rgb) -> Result<Chromaticity, ModelError> {
    if !v.is_finite() || v.min_component() < 0.0 {
        return Err(ModelError::InvalidColor);
    }
    let norm = v.norm();
    if norm <= EPS_BLACK {
        return Err(ModelError::BlackPixel { norm });
    }
    Ok(Chromaticity(v * (1.0 / norm)))
}

impl TryFrom<Rgb> for Chromaticity {
    type Error = ModelError;

    fn try_from(v: Rgb) -> Result<Self, ModelError> {
        l2_chromaticity(v)
    }
}

/// The illuminant direction `Γ` shared by every pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminationBasis {
    gamma: Chromaticity,
}

impl IlluminationBasis {
    pub fn new(gamma: Chromaticity) -> Self {
        IlluminationBasis { gamma }
    }

    pub fn white() -> Self {
        IlluminationBasis::new(Chromaticity::white())
    }

    #[inline]
    pub fn gamma(&self) -> Chromaticity {
        self.gamma
    }

    /// Component of `v` along `Γ`.
    #[inline]
    pub fn along(&self, v: Rgb) -> f64 {
        v.dot(self.gamma.0)
    }

    /// `v` with its `Γ` component removed.
    #[inline]
    pub fn reject(&self, v: Rgb) -> Rgb {
        v - self.gamma.0 * self.along(v)
    }
}

impl Default for IlluminationBasis {
    fn default() -> Self {
        IlluminationBasis::white()
    }
}

/// Unit direction orthogonal to the illuminant. Cluster centers and the
/// per-pixel `Γ⊥` field both live in this plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerpDirection(Rgb);

impl PerpDirection {
    /// Projects `v` onto the plane orthogonal to `Γ` and normalizes.
    /// Returns `None` when nothing is left after the projection.
    pub fn from_vector(v: Rgb, basis: &IlluminationBasis) -> Option<Self> {
        let r = basis.reject(v);
        let n = r.norm();
        if n <= EPS_GRAY * 1e-3 || !n.is_finite() {
            return None;
        }
        // A second rejection pass removes the rounding left by the first.
        let r = basis.reject(r * (1.0 / n));
        let n = r.norm();
        Some(PerpDirection(r * (1.0 / n)))
    }

    #[inline]
    pub fn rgb(self) -> Rgb {
        self.0
    }

    #[inline]
    pub fn dot(self, other: PerpDirection) -> f64 {
        self.0.dot(other.0)
    }
}

/// `Λ = a·Γ⊥ + b·Γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub a: f64,
    pub b: f64,
    pub gamma_perp: PerpDirection,
}

/// Splits a chromaticity into its components orthogonal and parallel to `Γ`.
pub fn decompose(
    lambda: Chromaticity,
    basis: &IlluminationBasis,
) -> Result<Decomposition, ModelError> {
    let b = basis.along(lambda.0);
    let residue = lambda.0 - basis.gamma.0 * b;
    let a = residue.norm();
    if a <= EPS_GRAY {
        return Err(ModelError::AchromaticColor { residue: a });
    }
    Ok(Decomposition {
        a,
        b,
        gamma_perp: PerpDirection(residue * (1.0 / a)),
    })
}

/// Coefficients of a normalized pixel on `{C, Γ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionCoeffs {
    pub gamma_perp: f64,
    pub gamma: f64,
}

/// Projects a pixel chromaticity onto a center direction and the illuminant.
/// No clamping: a center from the wrong material can produce a negative
/// `gamma_perp`.
#[inline]
pub fn project_onto(
    pixel: Chromaticity,
    center: PerpDirection,
    basis: &IlluminationBasis,
) -> ProjectionCoeffs {
    debug_assert!((center.0.norm() - 1.0).abs() <= 1e-6);
    debug_assert!(basis.along(center.0).abs() <= 1e-6);
    ProjectionCoeffs {
        gamma_perp: pixel.0.dot(center.0),
        gamma: basis.along(pixel.0),
    }
}

/// `1 − (γ⊥² + γ²)`: the squared norm of the pixel chromaticity outside
/// `span{C, Γ}`. Zero for a pixel that fits the model exactly.
#[inline]
pub fn unit_circle_residual(coeffs: ProjectionCoeffs) -> f64 {
    1.0 - (coeffs.gamma_perp * coeffs.gamma_perp + coeffs.gamma * coeffs.gamma)
}

/// Divides every channel by the illuminant so the effective illuminant
/// becomes white, then rescales by the largest illuminant component to keep
/// the dynamic range.
pub fn white_balance(img: &LinearImage, illum: Chromaticity) -> Result<LinearImage, ModelError> {
    let gains = balance_gains(illum)?;
    let pixels = par::map(img.pixels(), |p| p.zip_map(gains, |v, g| v * g));
    Ok(LinearImage::new(img.width(), img.height(), pixels).expect("same dimensions"))
}

/// Inverse of [`white_balance`].
pub fn restore_illuminant(
    img: &LinearImage,
    illum: Chromaticity,
) -> Result<LinearImage, ModelError> {
    let gains = balance_gains(illum)?;
    let pixels = par::map(img.pixels(), |p| p.zip_map(gains, |v, g| v / g));
    Ok(LinearImage::new(img.width(), img.height(), pixels).expect("same dimensions"))
}

fn balance_gains(illum: Chromaticity) -> Result<Rgb, ModelError> {
    let e = illum.0;
    if e.min_component() <= 0.0 {
        return Err(ModelError::InvalidIlluminant);
    }
    let scale = e.max_component();
    Ok(e.map(|c| scale / c))
}

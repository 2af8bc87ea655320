//! Scoring a separation against ground truth.

use alloc::vec;
use core::fmt;

use crate::cluster::PixelLabel;
use crate::image::LinearImage;
use crate::par;

/// MSE below this counts as an exact match.
pub const EXACT_MSE: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("dimension mismatch: {expected} vs {got} pixels")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Peak signal-to-noise ratio in dB with a peak of 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Self {
        if mse < EXACT_MSE {
            Psnr::Infinite
        } else {
            Psnr::Finite(-10.0 * libm::log10(mse))
        }
    }

    /// The value in dB, with `Infinite` mapped to `f64::INFINITY`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl PartialOrd for Psnr {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        self.db().partial_cmp(&other.db())
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.3}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse(result: &LinearImage, truth: &LinearImage) -> Result<f64, EvalError> {
    if !result.same_dimensions(truth) {
        return Err(EvalError::DimensionMismatch {
            expected: truth.len(),
            got: result.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let t = truth.pixels();
    let sum = par::sum(result.pixels(), |i, p| {
        let d = *p - t[i];
        d.norm_squared()
    });
    Ok(sum / (3 * truth.len()) as f64)
}

pub fn psnr(result: &LinearImage, truth: &LinearImage) -> Result<Psnr, EvalError> {
    mse(result, truth).map(Psnr::from_mse)
}

/// Fraction of unflagged pixels whose predicted cluster maps to their true
/// material, where each predicted cluster maps to the material it overlaps
/// most. Several clusters may map to the same material, so refining a
/// material into pieces is not penalized. Ties go to the lowest material id.
/// Returns 1.0 when no pixel is clustered.
pub fn cluster_accuracy(labels: &[PixelLabel], truth: &[u32]) -> Result<f64, EvalError> {
    if labels.len() != truth.len() {
        return Err(EvalError::DimensionMismatch {
            expected: truth.len(),
            got: labels.len(),
        });
    }
    let clusters = labels
        .iter()
        .filter_map(|l| l.cluster())
        .max()
        .map_or(0, |m| m + 1);
    let materials = truth.iter().max().map_or(0, |m| *m as usize + 1);
    let mut overlap = vec![0u64; clusters * materials];
    let mut counted = 0u64;
    for (l, &t) in labels.iter().zip(truth) {
        if let Some(k) = l.cluster() {
            overlap[k * materials + t as usize] += 1;
            counted += 1;
        }
    }
    if counted == 0 {
        return Ok(1.0);
    }
    let matched: u64 = overlap
        .chunks(materials.max(1))
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(matched as f64 / counted as f64)
}

/// Scores of one separation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub psnr_diffuse: Psnr,
    pub psnr_specular: Psnr,
    /// `None` when no label maps were compared.
    pub cluster_accuracy: Option<f64>,
    pub iterations: usize,
    pub wall_time_secs: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::Rgb;
    use alloc::vec::Vec;

    #[test]
    fn psnr_examples() {
        let truth = LinearImage::filled(7, 5, Rgb::splat(0.5));
        assert_eq!(psnr(&truth, &truth).unwrap(), Psnr::Infinite);
        let off = LinearImage::filled(7, 5, Rgb::splat(0.6));
        let db = psnr(&off, &truth).unwrap().db();
        assert!((db - 20.0).abs() < 1e-9, "{db}");
        let off = LinearImage::filled(7, 5, Rgb::splat(0.51));
        assert!((psnr(&off, &truth).unwrap().db() - 40.0).abs() < 1e-9);
        let small = LinearImage::filled(5, 7, Rgb::splat(0.5));
        assert!(matches!(psnr(&small, &truth), Err(EvalError::DimensionMismatch { .. })));
    }

    #[test]
    fn psnr_orders_with_infinite_on_top() {
        assert!(Psnr::Infinite > Psnr::Finite(300.0));
        assert!(Psnr::Finite(30.0) > Psnr::Finite(27.0));
    }

    #[test]
    fn accuracy_examples() {
        let truth: Vec<u32> = (0..12).map(|i| (i / 6) as u32).collect();
        let same: Vec<PixelLabel> = truth.iter().map(|&t| PixelLabel::Cluster(t)).collect();
        assert_eq!(cluster_accuracy(&same, &truth).unwrap(), 1.0);
        // Three clusters refining two materials.
        let refined: Vec<PixelLabel> = (0..12)
            .map(|i| PixelLabel::Cluster([0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2, 2][i]))
            .collect();
        assert_eq!(cluster_accuracy(&refined, &truth).unwrap(), 1.0);
        // Flagged pixels are ignored.
        let mut flagged = same.clone();
        flagged[0] = PixelLabel::Black;
        flagged[7] = PixelLabel::Achromatic;
        assert_eq!(cluster_accuracy(&flagged, &truth).unwrap(), 1.0);
        let wrong: Vec<PixelLabel> = (0..12).map(|_| PixelLabel::Cluster(0)).collect();
        assert_eq!(cluster_accuracy(&wrong, &truth).unwrap(), 0.5);
        assert!(cluster_accuracy(&wrong[..3], &truth).is_err());
    }

    #[test]
    fn random_labels_score_a_quarter() {
        // splitmix64 stream as an independent label source.
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        let n = 40_000;
        let truth: Vec<u32> = (0..n).map(|i| (i * 4 / n) as u32).collect();
        let labels: Vec<PixelLabel> = (0..n).map(|_| PixelLabel::Cluster((next() % 4) as u32)).collect();
        let acc = cluster_accuracy(&labels, &truth).unwrap();
        assert!((acc - 0.25).abs() < 0.01, "{acc}");
    }
}

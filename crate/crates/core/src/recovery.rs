//! Diffuse/specular separation from pure diffuse pixels.
//!
//! Within one material, normalized pixels trace an arc of the unit circle as
//! the specular share grows, and `γ = α·b + β` is smallest at the pure
//! diffuse end. The first peak of a cluster's `γ` histogram therefore marks
//! the pure diffuse pixels, whose `γ⊥/γ` equals the body color's `a/b`. That
//! ratio is the same for every pixel of the material, so each pixel's
//! diffuse part follows from its projection on the cluster center alone.

use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::ClusterSet;
use crate::color::Rgb;
use crate::image::LinearImage;
use crate::model::{l2_chromaticity, Chromaticity, IlluminationBasis, PerpDirection, EPS_GRAY};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum RecoveryError {
    #[error("cluster {0} has no pixels")]
    EmptyCluster(usize),
    #[error("no histogram bin passes the peak mass floor")]
    NoPeak,
    #[error("pure diffuse coefficient {gamma_d} leaves no usable ratio")]
    DegenerateRatio { gamma_d: f64 },
    #[error("no material model for cluster {0}")]
    ModelMissing(usize),
    #[error("cluster map does not match the image dimensions")]
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    /// Histogram bin width over `γ ∈ [0, 1.001]`.
    pub bin_width: f64,
    /// A peak needs at least this fraction of the cluster...
    pub peak_mass_fraction: f64,
    /// ...and at least this many pixels after smoothing.
    pub peak_min_count: f64,
    /// Percentile of `γ` used when no peak qualifies.
    pub fallback_percentile: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            bin_width: 0.005,
            peak_mass_fraction: 0.005,
            peak_min_count: 5.0,
            fallback_percentile: 0.02,
        }
    }
}

/// Upper edge of the `γ` histogram range. Slightly above 1 so that fully
/// specular pixels (`γ = 1`) land inside it.
pub const GAMMA_RANGE: f64 = 1.001;

#[derive(Debug, Clone, PartialEq)]
pub struct GammaHistogram {
    pub cluster: usize,
    pub bin_width: f64,
    pub counts: Vec<u32>,
}

impl GammaHistogram {
    /// Out-of-range samples are clamped into the first or last bin.
    pub fn from_samples(cluster: usize, samples: &[f64], bin_width: f64) -> Self {
        assert!(bin_width > 0.0, "bin width must be positive");
        let bins = libm::ceil(GAMMA_RANGE / bin_width) as usize;
        let mut counts = vec![0u32; bins];
        for &g in samples {
            let i = if g <= 0.0 {
                0
            } else {
                ((g / bin_width) as usize).min(bins - 1)
            };
            counts[i] += 1;
        }
        GammaHistogram {
            cluster,
            bin_width,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    #[inline]
    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }
}

/// `γ = Ĩ·Γ` for every chromatic pixel, grouped by cluster.
pub fn gamma_samples(
    img: &LinearImage,
    clusters: &ClusterSet,
    basis: &IlluminationBasis,
) -> Vec<Vec<f64>> {
    assert_eq!(img.len(), clusters.labels().len(), "cluster map size");
    let per_pixel: Vec<Option<(usize, f64)>> = par::map_indexed(img.pixels(), |i, &p| {
        let k = clusters.labels()[i].cluster()?;
        let c = l2_chromaticity(p).ok()?;
        Some((k, basis.along(c.rgb())))
    });
    let mut out: Vec<Vec<f64>> = clusters.sizes().iter().map(|&n| Vec::with_capacity(n)).collect();
    for (k, g) in per_pixel.into_iter().flatten() {
        out[k].push(g);
    }
    out
}

pub fn gamma_histogram(
    img: &LinearImage,
    clusters: &ClusterSet,
    cluster_id: usize,
    basis: &IlluminationBasis,
    bin_width: f64,
) -> Result<GammaHistogram, RecoveryError> {
    if cluster_id >= clusters.len() || clusters.sizes()[cluster_id] == 0 {
        return Err(RecoveryError::EmptyCluster(cluster_id));
    }
    let samples = gamma_samples(img, clusters, basis);
    Ok(GammaHistogram::from_samples(cluster_id, &samples[cluster_id], bin_width))
}

/// Center of the lowest-`γ` local maximum of the 3-bin box-smoothed
/// histogram whose smoothed count reaches `max(min_count, mass_fraction·n)`.
/// A flat-topped maximum reports the middle of its plateau.
pub fn first_peak(hist: &GammaHistogram, cfg: &RecoveryConfig) -> Result<f64, RecoveryError> {
    let n = hist.counts.len();
    let total = hist.total();
    if total == 0 {
        return Err(RecoveryError::NoPeak);
    }
    let c = |i: isize| -> f64 {
        if i < 0 || i as usize >= n {
            0.0
        } else {
            hist.counts[i as usize] as f64
        }
    };
    let smoothed: Vec<f64> = (0..n as isize)
        .map(|i| (c(i - 1) + c(i) + c(i + 1)) / 3.0)
        .collect();
    let s = |i: isize| -> f64 {
        if i < 0 || i as usize >= n {
            f64::NEG_INFINITY
        } else {
            smoothed[i as usize]
        }
    };
    let floor = cfg.peak_min_count.max(cfg.peak_mass_fraction * total as f64);
    let mut i = 0isize;
    while (i as usize) < n {
        let v = s(i);
        if v >= floor && v >= s(i - 1) {
            // Walk the plateau, if any.
            let mut j = i;
            while s(j + 1) == v {
                j += 1;
            }
            if v > s(j + 1) {
                let mid = (i + j) as usize / 2;
                return Ok(hist.bin_center(mid));
            }
            i = j + 1;
            continue;
        }
        i += 1;
    }
    Err(RecoveryError::NoPeak)
}

/// Median of the samples within 1.5 bins of the peak center: the `γ` of the
/// pure diffuse population at full precision rather than bin resolution.
pub fn refine_peak(samples: &[f64], peak: f64, bin_width: f64) -> f64 {
    let half = 1.5 * bin_width;
    let mut near: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|g| libm::fabs(g - peak) <= half)
        .collect();
    if near.is_empty() {
        return peak;
    }
    median(&mut near)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `q`-quantile by nearest rank.
pub fn percentile(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let rank = libm::ceil(q.clamp(0.0, 1.0) * v.len() as f64) as usize;
    Some(v[rank.saturating_sub(1).min(v.len() - 1)])
}

/// `(γ⊥_d, a/b)` from the pure diffuse `γ_d`.
pub fn estimate_ratio(gamma_d: f64) -> Result<(f64, f64), RecoveryError> {
    if !(gamma_d > 0.0) || gamma_d >= 1.0 - EPS_GRAY {
        return Err(RecoveryError::DegenerateRatio { gamma_d });
    }
    let gamma_perp_d = libm::sqrt(1.0 - gamma_d * gamma_d);
    Ok((gamma_perp_d, gamma_perp_d / gamma_d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    pub center: PerpDirection,
    pub gamma_perp_d: f64,
    pub gamma_d: f64,
    pub ratio: f64,
    pub diffuse_chroma: Chromaticity,
}

impl MaterialModel {
    pub fn new(
        center: PerpDirection,
        gamma_d: f64,
        basis: &IlluminationBasis,
    ) -> Result<Self, RecoveryError> {
        let (gamma_perp_d, ratio) = estimate_ratio(gamma_d)?;
        let raw = center.rgb() * gamma_perp_d + basis.gamma().rgb() * gamma_d;
        let diffuse_chroma = l2_chromaticity(raw.map(|c| c.max(0.0)))
            .map_err(|_| RecoveryError::DegenerateRatio { gamma_d })?;
        Ok(MaterialModel {
            center,
            gamma_perp_d,
            gamma_d,
            ratio,
            diffuse_chroma,
        })
    }
}

/// How the pure diffuse coefficient of a cluster was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakSource {
    Histogram,
    PercentileFallback,
}

/// Per-cluster recovery model. Clusters whose ratio degenerates (near-gray
/// or fully specular) pass through unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClusterModel {
    Material {
        model: MaterialModel,
        source: PeakSource,
    },
    PassThrough {
        gamma_d: f64,
    },
}

impl ClusterModel {
    pub fn material(&self) -> Option<&MaterialModel> {
        match self {
            ClusterModel::Material { model, .. } => Some(model),
            ClusterModel::PassThrough { .. } => None,
        }
    }
}

/// Builds a model for every cluster from its `γ` distribution.
pub fn estimate_models(
    img: &LinearImage,
    clusters: &ClusterSet,
    basis: &IlluminationBasis,
    cfg: &RecoveryConfig,
) -> Result<Vec<ClusterModel>, RecoveryError> {
    let samples = gamma_samples(img, clusters, basis);
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| model_from_samples(k, s, clusters.centers()[k], basis, cfg))
        .collect()
}

pub fn model_from_samples(
    cluster: usize,
    samples: &[f64],
    center: PerpDirection,
    basis: &IlluminationBasis,
    cfg: &RecoveryConfig,
) -> Result<ClusterModel, RecoveryError> {
    if samples.is_empty() {
        return Err(RecoveryError::EmptyCluster(cluster));
    }
    let hist = GammaHistogram::from_samples(cluster, samples, cfg.bin_width);
    let (gamma_d, source) = match first_peak(&hist, cfg) {
        Ok(peak) => (refine_peak(samples, peak, cfg.bin_width), PeakSource::Histogram),
        Err(_) => (
            percentile(samples, cfg.fallback_percentile).expect("non-empty"),
            PeakSource::PercentileFallback,
        ),
    };
    Ok(match MaterialModel::new(center, gamma_d, basis) {
        Ok(model) => ClusterModel::Material { model, source },
        Err(_) => ClusterModel::PassThrough { gamma_d },
    })
}

/// Splits one pixel into `(diffuse, specular)`.
///
/// The body-color amount comes from the projection on the cluster center,
/// the diffuse share along `Γ` from the material ratio, and whatever `Γ`
/// energy is left over is specular. Energy outside `span{C, Γ}` stays in the
/// diffuse part. Specular is clamped per channel to `[0, pixel]` and the
/// diffuse part is whatever remains, so the two always sum to the pixel.
#[inline]
pub fn separate_pixel(pixel: Rgb, model: &MaterialModel, basis: &IlluminationBasis) -> (Rgb, Rgb) {
    let p_perp = pixel.dot(model.center.rgb()).max(0.0);
    let spec_mag = basis.along(pixel) - p_perp / model.ratio;
    let raw = basis.gamma().rgb() * spec_mag;
    let specular = raw.zip_map(pixel, |s, p| s.clamp(0.0, p.max(0.0)));
    (pixel - specular, specular)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub diffuse: LinearImage,
    pub specular: LinearImage,
}

/// Applies [`separate_pixel`] everywhere; unclustered pixels and
/// pass-through clusters go entirely to the diffuse image.
pub fn separate_image(
    img: &LinearImage,
    clusters: &ClusterSet,
    models: &[ClusterModel],
    basis: &IlluminationBasis,
) -> Result<SeparationResult, RecoveryError> {
    if img.len() != clusters.labels().len() {
        return Err(RecoveryError::DimensionMismatch);
    }
    if models.len() < clusters.len() {
        return Err(RecoveryError::ModelMissing(models.len()));
    }
    let pairs: Vec<(Rgb, Rgb)> = par::map_indexed(img.pixels(), |i, &p| {
        match clusters.labels()[i].cluster().and_then(|k| models[k].material()) {
            Some(m) => separate_pixel(p, m, basis),
            None => (p, Rgb::ZERO),
        }
    });
    let (d, s): (Vec<Rgb>, Vec<Rgb>) = pairs.into_iter().unzip();
    Ok(SeparationResult {
        diffuse: LinearImage::new(img.width(), img.height(), d).expect("same dimensions"),
        specular: LinearImage::new(img.width(), img.height(), s).expect("same dimensions"),
    })
}

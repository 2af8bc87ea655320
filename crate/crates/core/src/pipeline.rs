//! End-to-end highlight removal and its downsampled fast path.

use alloc::vec::Vec;

use crate::cluster::{
    adaptive_cluster_field, specular_free_field, ClusterConfig, ClusterError, ClusterSet,
    FieldEntry, FitDiagnostics, PixelLabel, SpecularFreeField,
};
use crate::color::Rgb;
use crate::image::LinearImage;
use crate::model::{restore_illuminant, white_balance, Chromaticity, IlluminationBasis, ModelError, PerpDirection};
use crate::par;
use crate::recovery::{
    estimate_models, separate_image, ClusterModel, PeakSource, RecoveryConfig, RecoveryError,
    SeparationResult,
};

/// Smallest allowed long edge for the downsampled image.
pub const MIN_TARGET_EDGE: usize = 32;
pub const DEFAULT_TARGET_EDGE: usize = 200;

/// How the illuminant is handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Illumination {
    /// `Γ = (1,1,1)/√3`.
    White,
    /// Work directly in the basis of the given illuminant.
    Chromaticity(Chromaticity),
    /// White-balance by the given illuminant, separate under white light and
    /// map the specular layer back.
    Divide(Chromaticity),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub illumination: Illumination,
    pub cluster: ClusterConfig,
    pub recovery: RecoveryConfig,
    /// Long-edge target of the fast path; `None` disables it.
    pub downsample: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            illumination: Illumination::White,
            cluster: ClusterConfig::default(),
            recovery: RecoveryConfig::default(),
            downsample: Some(DEFAULT_TARGET_EDGE),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.cluster;
        let r = &self.recovery;
        let bad = |what| Err(PipelineError::InvalidConfig(what));
        if c.initial_k == 0 {
            return bad("initial_k must be at least 1");
        }
        if !(c.tau_dev > 0.0 && c.tau_dev <= 1.0) {
            return bad("tau_dev must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&c.tau_frac) {
            return bad("tau_frac must lie in [0, 1]");
        }
        if c.max_iterations == 0 || c.max_kmeans_iterations == 0 {
            return bad("iteration caps must be at least 1");
        }
        if !(r.bin_width > 0.0 && r.bin_width <= 0.5) {
            return bad("bin_width must lie in (0, 0.5]");
        }
        if !(0.0..=1.0).contains(&r.peak_mass_fraction) || !(r.peak_min_count >= 0.0) {
            return bad("peak floor out of range");
        }
        if !(0.0..=1.0).contains(&r.fallback_percentile) {
            return bad("fallback percentile must lie in [0, 1]");
        }
        if matches!(self.downsample, Some(t) if t < MIN_TARGET_EDGE) {
            return bad("downsample target must be at least 32 pixels");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("input pixels must be finite and nonnegative")]
    InvalidInput,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

/// Non-fatal conditions met while producing a best-effort result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warning {
    /// The adaptive loop hit its cap with clusters still failing the fit.
    NoConvergence { iterations: usize, failing: usize },
    /// Too few chromatic pixels for clustering; one cluster was used.
    SingleClusterFallback { chromatic_pixels: usize },
    /// Nothing chromatic to separate; the input passes through as diffuse.
    NoChromaticPixels,
    /// No histogram peak; the percentile fallback set the pure diffuse point.
    PercentileFallback { cluster: usize },
    /// Degenerate ratio; the cluster passes through as diffuse.
    PassThrough { cluster: usize, gamma_d: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// `None` when clustering was skipped by a fallback.
    pub fit: Option<FitDiagnostics>,
    pub models: Vec<ClusterModel>,
    pub warnings: Vec<Warning>,
    /// Box-filter factor of the fast path, 1 for full resolution.
    pub downsample_factor: usize,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.fit.as_ref().map_or(0, |f| f.iterations)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub separation: SeparationResult,
    pub clusters: ClusterSet,
    pub diagnostics: Diagnostics,
}

/// The image and basis the algorithm actually runs on.
struct Workspace {
    image: LinearImage,
    basis: IlluminationBasis,
}

fn prepare(img: &LinearImage, cfg: &PipelineConfig) -> Result<Workspace, PipelineError> {
    cfg.validate()?;
    if img.pixels().iter().any(|p| !p.is_finite() || p.min_component() < 0.0) {
        return Err(PipelineError::InvalidInput);
    }
    Ok(match cfg.illumination {
        Illumination::White => Workspace {
            image: img.clone(),
            basis: IlluminationBasis::white(),
        },
        Illumination::Chromaticity(c) => Workspace {
            image: img.clone(),
            basis: IlluminationBasis::new(c),
        },
        Illumination::Divide(c) => Workspace {
            image: white_balance(img, c)?,
            basis: IlluminationBasis::white(),
        },
    })
}

/// Result of the clustering stage.
#[derive(Debug, Clone)]
pub struct ClusterStage {
    pub clusters: ClusterSet,
    pub fit: Option<FitDiagnostics>,
    pub warnings: Vec<Warning>,
}

/// Adaptive clustering with graceful fallbacks for images that are mostly
/// black or gray.
pub fn cluster_stage(
    img: &LinearImage,
    field: &SpecularFreeField,
    basis: &IlluminationBasis,
    cfg: &ClusterConfig,
) -> Result<ClusterStage, PipelineError> {
    match adaptive_cluster_field(img, field, basis, cfg) {
        Ok((clusters, fit)) => {
            let mut warnings = Vec::new();
            if !fit.converged {
                warnings.push(Warning::NoConvergence {
                    iterations: fit.iterations,
                    failing: fit.failing(),
                });
            }
            Ok(ClusterStage {
                clusters,
                fit: Some(fit),
                warnings,
            })
        }
        Err(ClusterError::TooFewPixels { available, .. }) => {
            let (clusters, warning) = match ClusterSet::single(field, basis) {
                Some(set) => (
                    set,
                    Warning::SingleClusterFallback {
                        chromatic_pixels: available,
                    },
                ),
                None => (flagged_only(field)?, Warning::NoChromaticPixels),
            };
            Ok(ClusterStage {
                clusters,
                fit: None,
                warnings: alloc::vec![warning],
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn flagged_only(field: &SpecularFreeField) -> Result<ClusterSet, ClusterError> {
    let labels = field
        .entries()
        .iter()
        .map(|e| match e {
            FieldEntry::Black => PixelLabel::Black,
            _ => PixelLabel::Achromatic,
        })
        .collect();
    ClusterSet::from_parts(field.width(), field.height(), labels, Vec::new())
}

fn model_warnings(models: &[ClusterModel]) -> impl Iterator<Item = Warning> + '_ {
    models.iter().enumerate().filter_map(|(cluster, m)| match *m {
        ClusterModel::Material {
            source: PeakSource::PercentileFallback,
            ..
        } => Some(Warning::PercentileFallback { cluster }),
        ClusterModel::PassThrough { gamma_d } => Some(Warning::PassThrough { cluster, gamma_d }),
        _ => None,
    })
}

/// Maps a separation of the white-balanced image back to the input space.
/// The specular layer is restored, clamped to the input and the diffuse
/// layer is recomputed as the remainder so the two still sum to the input.
fn finish(
    input: &LinearImage,
    cfg: &PipelineConfig,
    separation: SeparationResult,
) -> Result<SeparationResult, PipelineError> {
    let Illumination::Divide(c) = cfg.illumination else {
        return Ok(separation);
    };
    let restored = restore_illuminant(&separation.specular, c)?;
    let pairs: Vec<(Rgb, Rgb)> = par::map_indexed(input.pixels(), |i, &p| {
        let s = restored.pixels()[i].zip_map(p, |s, p| s.clamp(0.0, p));
        (p - s, s)
    });
    let (d, s): (Vec<Rgb>, Vec<Rgb>) = pairs.into_iter().unzip();
    let (w, h) = (input.width(), input.height());
    Ok(SeparationResult {
        diffuse: LinearImage::new(w, h, d).expect("same dimensions"),
        specular: LinearImage::new(w, h, s).expect("same dimensions"),
    })
}

/// Full-resolution pipeline: cluster, estimate one model per cluster and
/// separate every pixel.
pub fn remove_highlights(
    img: &LinearImage,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let ws = prepare(img, cfg)?;
    let field = specular_free_field(&ws.image, &ws.basis);
    let stage = cluster_stage(&ws.image, &field, &ws.basis, &cfg.cluster)?;
    let models = estimate_models(&ws.image, &stage.clusters, &ws.basis, &cfg.recovery)?;
    let separation = separate_image(&ws.image, &stage.clusters, &models, &ws.basis)?;
    let mut warnings = stage.warnings;
    warnings.extend(model_warnings(&models));
    Ok(PipelineOutput {
        separation: finish(img, cfg, separation)?,
        clusters: stage.clusters,
        diagnostics: Diagnostics {
            fit: stage.fit,
            models,
            warnings,
            downsample_factor: 1,
        },
    })
}

/// Integer box-filter factor that brings the long edge to at most `target`.
pub fn downsample_factor(width: usize, height: usize, target: usize) -> usize {
    width.max(height).div_ceil(target.max(1)).max(1)
}

/// Averages `factor × factor` blocks. Blocks cut off by the right or bottom
/// edge average the pixels they contain.
pub fn box_downsample(img: &LinearImage, factor: usize) -> LinearImage {
    let factor = factor.max(1);
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let pixels = par::map_range(ow * oh, |i| {
        let (bx, by) = (i % ow, i / ow);
        let xs = bx * factor..((bx + 1) * factor).min(w);
        let ys = by * factor..((by + 1) * factor).min(h);
        let mut sum = Rgb::ZERO;
        for y in ys.clone() {
            for x in xs.clone() {
                sum += img.get(x, y);
            }
        }
        sum * (1.0 / (xs.len() * ys.len()) as f64)
    });
    LinearImage::new(ow, oh, pixels).expect("dimensions")
}

/// Labels every chromatic pixel with the center of highest correlation.
/// Ties go to the lowest index; flagged pixels keep their flag.
pub fn assign_to_centers(field: &SpecularFreeField, centers: &[PerpDirection]) -> Vec<PixelLabel> {
    par::map(field.entries(), |e| match e {
        FieldEntry::Direction(d) if !centers.is_empty() => {
            let mut best = 0;
            let mut best_dot = f64::NEG_INFINITY;
            for (k, c) in centers.iter().enumerate() {
                let v = c.dot(*d);
                if v > best_dot {
                    best = k;
                    best_dot = v;
                }
            }
            PixelLabel::Cluster(best as u32)
        }
        FieldEntry::Black => PixelLabel::Black,
        _ => PixelLabel::Achromatic,
    })
}

/// Clustering stage of the fast path.
#[derive(Debug, Clone)]
pub struct FastClusterStage {
    /// Box-downsampled working image.
    pub small: LinearImage,
    /// Clustering of `small`.
    pub small_stage: ClusterStage,
    /// Full-resolution labels against the centers of `small_stage`.
    pub full: ClusterSet,
    pub factor: usize,
}

/// Clusters a box-downsampled copy, then labels the full-resolution field by
/// nearest center.
pub fn fast_cluster_stage(
    img: &LinearImage,
    field: &SpecularFreeField,
    basis: &IlluminationBasis,
    cfg: &ClusterConfig,
    target_edge: usize,
) -> Result<FastClusterStage, PipelineError> {
    let factor = downsample_factor(img.width(), img.height(), target_edge);
    let small = box_downsample(img, factor);
    let small_field = specular_free_field(&small, basis);
    let small_stage = cluster_stage(&small, &small_field, basis, cfg)?;
    let labels = assign_to_centers(field, small_stage.clusters.centers());
    let full = ClusterSet::from_parts(
        img.width(),
        img.height(),
        labels,
        small_stage.clusters.centers().to_vec(),
    )?;
    Ok(FastClusterStage {
        small,
        small_stage,
        full,
        factor,
    })
}

/// Downsampled pipeline: clustering and model estimation run on a box-filtered
/// copy whose long edge is at most the configured target; separation runs at
/// full resolution. Images already within the target, or configs with
/// downsampling off, take the full-resolution path.
pub fn remove_highlights_fast(
    img: &LinearImage,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let target = match cfg.downsample {
        Some(t) if img.width().max(img.height()) > t => t,
        _ => return remove_highlights(img, cfg),
    };
    let ws = prepare(img, cfg)?;
    let field = specular_free_field(&ws.image, &ws.basis);
    let fast = fast_cluster_stage(&ws.image, &field, &ws.basis, &cfg.cluster, target)?;
    let models = estimate_models(&fast.small, &fast.small_stage.clusters, &ws.basis, &cfg.recovery)?;
    let clusters = fast.full;
    let separation = separate_image(&ws.image, &clusters, &models, &ws.basis)?;
    let mut warnings = fast.small_stage.warnings;
    warnings.extend(model_warnings(&models));
    Ok(PipelineOutput {
        separation: finish(img, cfg, separation)?,
        clusters,
        diagnostics: Diagnostics {
            fit: fast.small_stage.fit,
            models,
            warnings,
            downsample_factor: fast.factor,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::l2_chromaticity;
    use crate::synth::{builtin_scene, render};

    fn chroma(r: f64, g: f64, b: f64) -> Chromaticity {
        l2_chromaticity(Rgb::new(r, g, b)).unwrap()
    }

    fn assert_additive(input: &LinearImage, out: &SeparationResult) {
        for (i, p) in input.pixels().iter().enumerate() {
            let d = out.diffuse.pixels()[i];
            let s = out.specular.pixels()[i];
            assert!((d + s).max_abs_diff(*p) <= 1e-12);
            assert!(d.min_component() >= 0.0 && s.min_component() >= 0.0);
        }
    }

    #[test]
    fn zero_specular_passes_through() {
        let mut spec = builtin_scene("four-materials").unwrap().with_size(120, 80);
        spec.lobes.clear();
        let gt = render(&spec).unwrap();
        let out = remove_highlights(&gt.input, &PipelineConfig::default()).unwrap();
        assert!(out.separation.specular.max_value() < 1e-12);
        assert_additive(&gt.input, &out.separation);
    }

    #[test]
    fn black_and_gray_images_pass_through() {
        for value in [Rgb::ZERO, Rgb::splat(0.4)] {
            let img = LinearImage::filled(16, 16, value);
            let out = remove_highlights(&img, &PipelineConfig::default()).unwrap();
            assert_eq!(out.separation.diffuse, img);
            assert_eq!(out.diagnostics.warnings, alloc::vec![Warning::NoChromaticPixels]);
        }
    }

    #[test]
    fn tiny_chromatic_image_uses_one_cluster() {
        let img = LinearImage::from_fn(4, 4, |x, _| Rgb::new(0.6, 0.3, 0.1) + Rgb::splat(0.05 * x as f64));
        let out = remove_highlights(&img, &PipelineConfig::default()).unwrap();
        assert!(matches!(
            out.diagnostics.warnings[0],
            Warning::SingleClusterFallback { chromatic_pixels: 16 }
        ));
        assert_additive(&img, &out.separation);
    }

    #[test]
    fn rejects_bad_input_and_config() {
        let mut img = LinearImage::filled(4, 4, Rgb::splat(0.2));
        img.set(1, 1, Rgb::new(0.1, -0.2, 0.3));
        assert_eq!(
            remove_highlights(&img, &PipelineConfig::default()).unwrap_err(),
            PipelineError::InvalidInput
        );
        let mut cfg = PipelineConfig { downsample: Some(16), ..PipelineConfig::default() };
        assert!(matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))));
        cfg = PipelineConfig::default();
        cfg.cluster.initial_k = 0;
        assert!(matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))));
    }

    #[test]
    fn divide_mode_is_additive_in_input_space() {
        let mut spec = builtin_scene("single-1").unwrap().with_size(80, 60);
        let illum = chroma(0.600, 0.588, 0.542);
        spec.illumination = illum;
        let gt = render(&spec).unwrap();
        let cfg = PipelineConfig {
            illumination: Illumination::Divide(illum),
            ..PipelineConfig::default()
        };
        let out = remove_highlights(&gt.input, &cfg).unwrap();
        assert_additive(&gt.input, &out.separation);
        let err = crate::eval::psnr(&out.separation.diffuse, &gt.diffuse).unwrap();
        assert!(err.db() > 50.0, "{err}");
    }

    #[test]
    fn known_illuminant_basis_recovers_colored_light() {
        let mut spec = builtin_scene("single-2").unwrap().with_size(80, 60);
        let illum = chroma(0.600, 0.588, 0.542);
        spec.illumination = illum;
        let gt = render(&spec).unwrap();
        let cfg = PipelineConfig {
            illumination: Illumination::Chromaticity(illum),
            ..PipelineConfig::default()
        };
        let out = remove_highlights(&gt.input, &cfg).unwrap();
        assert!(crate::eval::psnr(&out.separation.diffuse, &gt.diffuse).unwrap().db() > 50.0);
    }

    #[test]
    fn downsampling_helpers() {
        assert_eq!(downsample_factor(650, 450, 200), 4);
        assert_eq!(downsample_factor(2600, 1800, 200), 13);
        assert_eq!(downsample_factor(100, 50, 200), 1);
        let img = LinearImage::from_fn(5, 3, |x, y| Rgb::splat((x + 10 * y) as f64));
        let small = box_downsample(&img, 2);
        assert_eq!((small.width(), small.height()), (3, 2));
        assert_eq!(small.get(0, 0), Rgb::splat(5.5));
        assert_eq!(small.get(2, 0), Rgb::splat(9.0));
        assert_eq!(small.get(2, 1), Rgb::splat(24.0));
    }

    #[test]
    fn fast_path_falls_back_for_small_images() {
        let gt = render(&builtin_scene("single-2").unwrap().with_size(150, 100)).unwrap();
        let cfg = PipelineConfig::default();
        let fast = remove_highlights_fast(&gt.input, &cfg).unwrap();
        let full = remove_highlights(&gt.input, &cfg).unwrap();
        assert_eq!(fast.diagnostics.downsample_factor, 1);
        assert_eq!(fast.separation, full.separation);
    }

    #[test]
    fn fast_path_labels_follow_nearest_center() {
        let gt = render(&builtin_scene("four-materials").unwrap()).unwrap();
        let cfg = PipelineConfig::default();
        let out = remove_highlights_fast(&gt.input, &cfg).unwrap();
        assert_eq!(out.diagnostics.downsample_factor, 4);
        let acc = crate::eval::cluster_accuracy(out.clusters.labels(), &gt.labels).unwrap();
        assert!(acc > 0.99, "{acc}");
        assert_additive(&gt.input, &out.separation);
    }
}

//! Material clustering in the illumination-orthogonal subspace.
//!
//! Every chromatic pixel is reduced to its unit `Γ⊥` direction, which does not
//! depend on specular strength. K-means groups those directions, and each
//! cluster is then checked against the unit-circle model: a cluster fails
//! when more than `tau_frac` of its pixels sit further than `tau_dev` from the
//! circle. The adaptive loop grows `k` by the number of failing clusters until
//! every cluster fits.

use alloc::vec;
use alloc::vec::Vec;

use crate::color::Rgb;
use crate::image::LinearImage;
use crate::model::{
    decompose, l2_chromaticity, project_onto, unit_circle_residual, IlluminationBasis,
    ModelError, PerpDirection,
};
use crate::par;

/// Per-pixel cluster assignment. Black and achromatic pixels are never
/// clustered and pass through the separation unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelLabel {
    Cluster(u32),
    Black,
    Achromatic,
}

impl PixelLabel {
    #[inline]
    pub fn cluster(self) -> Option<usize> {
        match self {
            PixelLabel::Cluster(k) => Some(k as usize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldEntry {
    Direction(PerpDirection),
    Black,
    Achromatic,
}

/// Per-pixel `Γ⊥` directions.
#[derive(Debug, Clone)]
pub struct SpecularFreeField {
    width: usize,
    height: usize,
    entries: Vec<FieldEntry>,
}

impl SpecularFreeField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn entries(&self) -> &[FieldEntry] {
        &self.entries
    }

    pub fn chromatic_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, FieldEntry::Direction(_)))
            .count()
    }
}

pub fn specular_free_field(img: &LinearImage, basis: &IlluminationBasis) -> SpecularFreeField {
    let entries = par::map(img.pixels(), |&p| field_entry(p, basis));
    SpecularFreeField {
        width: img.width(),
        height: img.height(),
        entries,
    }
}

fn field_entry(p: Rgb, basis: &IlluminationBasis) -> FieldEntry {
    match l2_chromaticity(p) {
        Ok(c) => match decompose(c, basis) {
            Ok(d) => FieldEntry::Direction(d.gamma_perp),
            Err(_) => FieldEntry::Achromatic,
        },
        // Negative or non-finite input is rejected before clustering; treat
        // anything else without a direction as black.
        Err(ModelError::BlackPixel { .. }) | Err(_) => FieldEntry::Black,
    }
}

/// Minimum cluster size after the final merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinClusterSize {
    /// `min(300, max(30, 1% of chromatic pixels))`.
    Auto,
    Fixed(usize),
}

impl MinClusterSize {
    pub fn resolve(self, chromatic_pixels: usize) -> usize {
        match self {
            MinClusterSize::Auto => (chromatic_pixels / 100).clamp(30, 300),
            MinClusterSize::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub initial_k: usize,
    /// Per-pixel residual above which a pixel counts as off the unit circle.
    pub tau_dev: f64,
    /// Fraction of off-circle pixels above which a cluster fails.
    pub tau_frac: f64,
    pub min_cluster_size: MinClusterSize,
    pub seed: u64,
    pub max_iterations: usize,
    pub max_kmeans_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            initial_k: 1,
            tau_dev: 0.1,
            tau_frac: 0.10,
            min_cluster_size: MinClusterSize::Auto,
            seed: 0,
            max_iterations: 10,
            max_kmeans_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("{available} chromatic pixels available, {required} required")]
    TooFewPixels { available: usize, required: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("label map is {got} pixels, image is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct ClusterSet {
    width: usize,
    height: usize,
    labels: Vec<PixelLabel>,
    centers: Vec<PerpDirection>,
    sizes: Vec<usize>,
}

impl ClusterSet {
    /// Builds a cluster set from explicit labels, recomputing sizes.
    /// Labels must index into `centers`.
    pub fn from_parts(
        width: usize,
        height: usize,
        labels: Vec<PixelLabel>,
        centers: Vec<PerpDirection>,
    ) -> Result<Self, ClusterError> {
        if labels.len() != width * height {
            return Err(ClusterError::DimensionMismatch {
                expected: width * height,
                got: labels.len(),
            });
        }
        let mut sizes = vec![0usize; centers.len()];
        for l in &labels {
            if let Some(k) = l.cluster() {
                assert!(k < centers.len(), "label {k} out of range");
                sizes[k] += 1;
            }
        }
        Ok(ClusterSet {
            width,
            height,
            labels,
            centers,
            sizes,
        })
    }

    /// Every chromatic pixel in one cluster whose center is the normalized
    /// mean direction. Returns `None` when there are no chromatic pixels.
    pub fn single(field: &SpecularFreeField, basis: &IlluminationBasis) -> Option<Self> {
        let sum = field.entries.iter().fold(Rgb::ZERO, |acc, e| match e {
            FieldEntry::Direction(d) => acc + d.rgb(),
            _ => acc,
        });
        let center = PerpDirection::from_vector(sum, basis).or_else(|| {
            field.entries.iter().find_map(|e| match e {
                FieldEntry::Direction(d) => Some(*d),
                _ => None,
            })
        })?;
        let labels = field
            .entries
            .iter()
            .map(|e| match e {
                FieldEntry::Direction(_) => PixelLabel::Cluster(0),
                FieldEntry::Black => PixelLabel::Black,
                FieldEntry::Achromatic => PixelLabel::Achromatic,
            })
            .collect();
        ClusterSet::from_parts(field.width, field.height, labels, vec![center]).ok()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[PixelLabel] {
        &self.labels
    }

    pub fn centers(&self) -> &[PerpDirection] {
        &self.centers
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// 8-bit gray level per pixel: clusters spread evenly over `0..=254`,
    /// unclustered pixels at 255.
    pub fn label_levels(&self) -> Vec<u8> {
        let n = self.centers.len();
        self.labels
            .iter()
            .map(|l| match l.cluster() {
                Some(k) if n > 1 => ((k * 254) / (n - 1)).min(254) as u8,
                Some(_) => 0,
                None => 255,
            })
            .collect()
    }
}

/// Position of `seed` in `0..n`, mixed so nearby seeds pick unrelated points.
fn seed_index(seed: u64, n: usize) -> usize {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z % n as u64) as usize
}

/// Index of the maximum (ties resolved toward the lowest index).
fn argmax(values: &[f64]) -> (usize, f64) {
    par::reduce_chunks(
        values,
        (usize::MAX, f64::NEG_INFINITY),
        |mut best, start, chunk| {
            for (j, &v) in chunk.iter().enumerate() {
                if v > best.1 {
                    best = (start + j, v);
                }
            }
            best
        },
        |a, b| if b.1 > a.1 { b } else { a },
    )
}

#[inline]
fn nearest(p: Rgb, centers: &[Rgb]) -> (usize, f64) {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = p.dot(*c);
        if d > best_dot {
            best_dot = d;
            best = k;
        }
    }
    (best, best_dot)
}

/// Deterministic farthest-point seeding. Stops early when every remaining
/// point coincides with a chosen center.
fn farthest_point_init(points: &[Rgb], k: usize, seed: u64) -> Vec<Rgb> {
    let mut centers = vec![points[seed_index(seed, points.len())]];
    // squared distance to the nearest chosen center
    let mut dist: Vec<f64> = par::map(points, |p| (*p - centers[0]).norm_squared());
    while centers.len() < k {
        let (i, d) = argmax(&dist);
        if d <= 0.0 {
            break;
        }
        let c = points[i];
        centers.push(c);
        par::for_each_mut(&mut dist, |j, dj| {
            let d = (points[j] - c).norm_squared();
            if d < *dj {
                *dj = d;
            }
        });
    }
    centers
}

/// K-means on unit `Γ⊥` directions under squared Euclidean distance.
///
/// Centers are re-projected onto the plane orthogonal to `Γ` and renormalized
/// after each update. Clusters that end up empty are reseeded from the point
/// farthest from its assigned center; any that stay empty are dropped, so the
/// result can hold fewer than `k` clusters when the field has fewer than `k`
/// distinct directions.
pub fn kmeans(
    field: &SpecularFreeField,
    k: usize,
    seed: u64,
    basis: &IlluminationBasis,
    max_iterations: usize,
) -> Result<ClusterSet, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    let (index, points): (Vec<usize>, Vec<Rgb>) = field
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e {
            FieldEntry::Direction(d) => Some((i, d.rgb())),
            _ => None,
        })
        .unzip();
    if points.len() < k {
        return Err(ClusterError::TooFewPixels {
            available: points.len(),
            required: k,
        });
    }

    let mut centers = farthest_point_init(&points, k, seed);
    let mut assign = vec![usize::MAX; points.len()];

    for _ in 0..max_iterations.max(1) {
        let next: Vec<(usize, f64)> = par::map(&points, |p| nearest(*p, &centers));
        let changed = par::reduce_chunks(
            &next,
            0usize,
            |mut acc, start, chunk| {
                for (j, (c, _)) in chunk.iter().enumerate() {
                    if assign[start + j] != *c {
                        acc += 1;
                    }
                }
                acc
            },
            |a, b| a + b,
        );
        for (a, (c, _)) in assign.iter_mut().zip(&next) {
            *a = *c;
        }
        if changed == 0 {
            break;
        }

        let kk = centers.len();
        let (sums, counts) = par::reduce_chunks(
            &points,
            (vec![Rgb::ZERO; kk], vec![0usize; kk]),
            |(mut s, mut n), start, chunk| {
                for (j, p) in chunk.iter().enumerate() {
                    let c = assign[start + j];
                    s[c] += *p;
                    n[c] += 1;
                }
                (s, n)
            },
            |(mut s, mut n), (s2, n2)| {
                for c in 0..s.len() {
                    s[c] += s2[c];
                    n[c] += n2[c];
                }
                (s, n)
            },
        );

        let mut taken: Vec<usize> = Vec::new();
        for c in 0..kk {
            let updated = if counts[c] > 0 {
                PerpDirection::from_vector(sums[c], basis)
            } else {
                None
            };
            match updated {
                Some(d) => centers[c] = d.rgb(),
                None => {
                    // Empty (or fully cancelling) cluster: move it to the
                    // worst-fit point not already used for a reseed.
                    let dist: Vec<f64> = par::map_indexed(&points, |j, p| {
                        if taken.contains(&j) {
                            f64::NEG_INFINITY
                        } else {
                            (*p - centers[assign[j]]).norm_squared()
                        }
                    });
                    let (j, d) = argmax(&dist);
                    if d > 0.0 {
                        centers[c] = points[j];
                        taken.push(j);
                    }
                }
            }
        }
    }

    // Final assignment against the settled centers, then compaction.
    let final_assign: Vec<usize> = par::map(&points, |p| nearest(*p, &centers).0);
    let mut counts = vec![0usize; centers.len()];
    for &c in &final_assign {
        counts[c] += 1;
    }
    let mut remap = vec![u32::MAX; centers.len()];
    let mut kept = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            remap[c] = kept.len() as u32;
            kept.push(PerpDirection::from_vector(centers[c], basis).expect("unit center"));
        }
    }

    let mut labels: Vec<PixelLabel> = field
        .entries
        .iter()
        .map(|e| match e {
            FieldEntry::Black => PixelLabel::Black,
            FieldEntry::Achromatic => PixelLabel::Achromatic,
            FieldEntry::Direction(_) => PixelLabel::Cluster(u32::MAX),
        })
        .collect();
    for (&i, &c) in index.iter().zip(&final_assign) {
        labels[i] = PixelLabel::Cluster(remap[c]);
    }
    ClusterSet::from_parts(field.width, field.height, labels, kept)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterFit {
    pub size: usize,
    /// Pixels whose residual exceeds `tau_dev`.
    pub deviating: usize,
    /// `deviating / size` (0 for an empty cluster).
    pub deviating_fraction: f64,
    /// Sum of per-pixel residuals, negatives from rounding clipped to 0.
    pub total_error: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub clusters: Vec<ClusterFit>,
    /// Outer iterations run by the adaptive loop (1 for a single evaluation).
    pub iterations: usize,
    pub converged: bool,
    /// Requested `k` per outer iteration.
    pub k_history: Vec<usize>,
}

impl FitDiagnostics {
    pub fn failing(&self) -> usize {
        self.clusters.iter().filter(|c| c.failed).count()
    }

    pub fn total_error(&self) -> f64 {
        self.clusters.iter().map(|c| c.total_error).sum()
    }
}

/// Projects every clustered pixel onto its center and `Γ` and tallies the
/// unit-circle residuals per cluster.
pub fn evaluate_fit(
    img: &LinearImage,
    clusters: &ClusterSet,
    basis: &IlluminationBasis,
    cfg: &ClusterConfig,
) -> FitDiagnostics {
    assert_eq!(img.len(), clusters.labels.len(), "cluster map size");
    let residuals: Vec<Option<(usize, f64)>> =
        par::map_indexed(img.pixels(), |i, &p| {
            let k = clusters.labels[i].cluster()?;
            let c = l2_chromaticity(p).ok()?;
            Some((k, unit_circle_residual(project_onto(c, clusters.centers[k], basis))))
        });
    let n = clusters.len();
    let (deviating, errors) = par::reduce_chunks(
        &residuals,
        (vec![0usize; n], vec![0.0f64; n]),
        |(mut dev, mut err), _, chunk| {
            for (k, d) in chunk.iter().flatten() {
                if *d > cfg.tau_dev {
                    dev[*k] += 1;
                }
                err[*k] += d.max(0.0);
            }
            (dev, err)
        },
        |(mut dev, mut err), (dev2, err2)| {
            for k in 0..dev.len() {
                dev[k] += dev2[k];
                err[k] += err2[k];
            }
            (dev, err)
        },
    );
    let fits: Vec<ClusterFit> = (0..n)
        .map(|k| {
            let size = clusters.sizes[k];
            let frac = if size == 0 {
                0.0
            } else {
                deviating[k] as f64 / size as f64
            };
            ClusterFit {
                size,
                deviating: deviating[k],
                deviating_fraction: frac,
                total_error: errors[k],
                failed: frac > cfg.tau_frac,
            }
        })
        .collect();
    let converged = fits.iter().all(|f| !f.failed);
    FitDiagnostics {
        clusters: fits,
        iterations: 1,
        converged,
        k_history: vec![n],
    }
}

/// Grows the cluster count until every cluster fits the unit-circle model,
/// then merges clusters below the minimum size into their nearest neighbor.
///
/// Hitting `max_iterations` with failing clusters is not an error: the last
/// clustering is returned with `converged == false`.
pub fn adaptive_cluster(
    img: &LinearImage,
    basis: &IlluminationBasis,
    cfg: &ClusterConfig,
) -> Result<(ClusterSet, FitDiagnostics), ClusterError> {
    let field = specular_free_field(img, basis);
    adaptive_cluster_field(img, &field, basis, cfg)
}

/// [`adaptive_cluster`] on a precomputed field.
pub fn adaptive_cluster_field(
    img: &LinearImage,
    field: &SpecularFreeField,
    basis: &IlluminationBasis,
    cfg: &ClusterConfig,
) -> Result<(ClusterSet, FitDiagnostics), ClusterError> {
    let available = field.chromatic_count();
    let min_size = cfg.min_cluster_size.resolve(available);
    if available == 0 || available < min_size {
        return Err(ClusterError::TooFewPixels {
            available,
            required: min_size.max(1),
        });
    }
    if cfg.initial_k == 0 {
        return Err(ClusterError::ZeroClusters);
    }

    let mut k = cfg.initial_k.min(available);
    let mut k_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut current = None;

    while iterations < cfg.max_iterations.max(1) {
        iterations += 1;
        k_history.push(k);
        let clusters = kmeans(field, k, cfg.seed, basis, cfg.max_kmeans_iterations)?;
        let fit = evaluate_fit(img, &clusters, basis, cfg);
        let failing = fit.failing();
        let exhausted = clusters.len() < k;
        current = Some(clusters);
        if failing == 0 {
            converged = true;
            break;
        }
        // No more distinct directions to split on.
        if exhausted || k >= available {
            break;
        }
        k = (k + failing).min(available);
    }

    let clusters = merge_small_clusters(current.expect("at least one iteration"), min_size);
    let mut fit = evaluate_fit(img, &clusters, basis, cfg);
    fit.iterations = iterations;
    fit.converged = converged;
    fit.k_history = k_history;
    Ok((clusters, fit))
}

/// Repeatedly folds the smallest undersized cluster into the cluster with the
/// closest center, then compacts the label ids.
fn merge_small_clusters(set: ClusterSet, min_size: usize) -> ClusterSet {
    let ClusterSet {
        width,
        height,
        mut labels,
        centers,
        mut sizes,
    } = set;
    let n = centers.len();
    let mut target: Vec<usize> = (0..n).collect();
    let mut alive = vec![true; n];

    loop {
        let live = alive.iter().filter(|a| **a).count();
        if live <= 1 {
            break;
        }
        let smallest = (0..n)
            .filter(|&c| alive[c] && sizes[c] < min_size)
            .min_by_key(|&c| (sizes[c], c));
        let Some(s) = smallest else { break };
        let mut best = usize::MAX;
        let mut best_dot = f64::NEG_INFINITY;
        for c in (0..n).filter(|&c| alive[c] && c != s) {
            let d = centers[s].dot(centers[c]);
            if d > best_dot {
                best_dot = d;
                best = c;
            }
        }
        alive[s] = false;
        sizes[best] += sizes[s];
        sizes[s] = 0;
        for t in target.iter_mut() {
            if *t == s {
                *t = best;
            }
        }
    }

    let mut remap = vec![u32::MAX; n];
    let mut kept = Vec::new();
    for c in 0..n {
        if alive[c] {
            remap[c] = kept.len() as u32;
            kept.push(centers[c]);
        }
    }
    for l in labels.iter_mut() {
        if let PixelLabel::Cluster(k) = l {
            *k = remap[target[*k as usize]];
        }
    }
    ClusterSet::from_parts(width, height, labels, kept).expect("consistent labels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Chromaticity;

    fn chroma(r: f64, g: f64, b: f64) -> Chromaticity {
        l2_chromaticity(Rgb::new(r, g, b)).unwrap()
    }

    /// Image made of vertical bands, one per color, with a specular ramp
    /// added down the rows of each band.
    fn banded(colors: &[Rgb], band_width: usize, height: usize, spec: f64) -> LinearImage {
        let g = Chromaticity::white().rgb();
        LinearImage::from_fn(colors.len() * band_width, height, |x, y| {
            let body = colors[x / band_width];
            let s = spec * (y as f64 / height as f64);
            body * 0.6 + g * s
        })
    }

    #[test]
    fn field_is_specular_free() {
        let basis = IlluminationBasis::white();
        let img = LinearImage::filled(4, 4, Rgb::new(0.4, 0.4, 0.2));
        let f = specular_free_field(&img, &basis);
        for e in f.entries() {
            let FieldEntry::Direction(d) = e else { panic!("flagged") };
            assert!(d.rgb().max_abs_diff(Rgb::new(0.4082, 0.4082, -0.8165)) < 1e-4);
        }

        let gray = LinearImage::filled(3, 3, Rgb::splat(0.4));
        let f = specular_free_field(&gray, &basis);
        assert!(f.entries().iter().all(|e| *e == FieldEntry::Achromatic));

        let black = LinearImage::filled(2, 2, Rgb::ZERO);
        let f = specular_free_field(&black, &basis);
        assert!(f.entries().iter().all(|e| *e == FieldEntry::Black));

        // Same body color, different specular strength: same direction.
        let img = banded(&[Rgb::new(0.9, 0.2, 0.1), Rgb::new(0.1, 0.3, 0.9)], 5, 20, 0.8);
        let f = specular_free_field(&img, &basis);
        let mut distinct: Vec<Rgb> = Vec::new();
        for e in f.entries() {
            let FieldEntry::Direction(d) = e else { panic!() };
            if !distinct.iter().any(|q| q.max_abs_diff(d.rgb()) < 1e-9) {
                distinct.push(d.rgb());
            }
        }
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn kmeans_single_value() {
        let basis = IlluminationBasis::white();
        let img = LinearImage::filled(10, 10, Rgb::new(0.4, 0.4, 0.2));
        let f = specular_free_field(&img, &basis);
        let set = kmeans(&f, 1, 7, &basis, 100).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.sizes(), &[100]);
        assert!(set.centers()[0]
            .rgb()
            .max_abs_diff(Rgb::new(0.4082, 0.4082, -0.8165))
            < 1e-4);
    }

    #[test]
    fn kmeans_too_few_pixels() {
        let basis = IlluminationBasis::white();
        let img = LinearImage::filled(2, 1, Rgb::new(0.4, 0.4, 0.2));
        let f = specular_free_field(&img, &basis);
        assert_eq!(
            kmeans(&f, 3, 0, &basis, 100).unwrap_err(),
            ClusterError::TooFewPixels { available: 2, required: 3 }
        );
        assert_eq!(kmeans(&f, 0, 0, &basis, 100).unwrap_err(), ClusterError::ZeroClusters);
    }

    #[test]
    fn kmeans_drops_duplicate_centers() {
        let basis = IlluminationBasis::white();
        let img = banded(&[Rgb::new(0.9, 0.2, 0.1), Rgb::new(0.1, 0.3, 0.9)], 4, 4, 0.5);
        let f = specular_free_field(&img, &basis);
        let set = kmeans(&f, 5, 0, &basis, 100).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn kmeans_recovers_separated_partition() {
        let basis = IlluminationBasis::white();
        let colors = [
            Rgb::new(0.9, 0.15, 0.1),
            Rgb::new(0.15, 0.85, 0.2),
            Rgb::new(0.1, 0.2, 0.9),
            Rgb::new(0.85, 0.8, 0.1),
        ];
        let img = banded(&colors, 6, 10, 0.7);
        let f = specular_free_field(&img, &basis);
        // Brute-force oracle: each pixel belongs with the generating color
        // whose direction is closest; all four directions are > 20° apart.
        let dirs: Vec<Rgb> = colors
            .iter()
            .map(|c| decompose(l2_chromaticity(*c).unwrap(), &basis).unwrap().gamma_perp.rgb())
            .collect();
        for i in 0..4 {
            for j in 0..i {
                assert!(dirs[i].dot(dirs[j]) < (20f64).to_radians().cos());
            }
        }
        for seed in 0..5 {
            let set = kmeans(&f, 4, seed, &basis, 100).unwrap();
            assert_eq!(set.len(), 4);
            let mut map = [usize::MAX; 4];
            for (i, l) in set.labels().iter().enumerate() {
                let truth = (i % img.width()) / 6;
                let k = l.cluster().unwrap();
                if map[truth] == usize::MAX {
                    map[truth] = k;
                }
                assert_eq!(map[truth], k, "seed {seed}");
            }
            let mut seen = map;
            seen.sort_unstable();
            assert_eq!(seen, [0, 1, 2, 3]);
        }
    }

    #[test]
    fn fit_exact_single_material() {
        let basis = IlluminationBasis::white();
        let img = banded(&[Rgb::new(0.8, 0.3, 0.2)], 20, 20, 0.6);
        let f = specular_free_field(&img, &basis);
        let set = kmeans(&f, 1, 0, &basis, 100).unwrap();
        let fit = evaluate_fit(&img, &set, &basis, &ClusterConfig::default());
        assert_eq!(fit.clusters[0].deviating, 0);
        assert!(fit.clusters[0].total_error <= 1e-6 * 400.0);
        assert!(fit.converged);
    }

    #[test]
    fn fit_fails_for_merged_materials() {
        let basis = IlluminationBasis::white();
        let c1 = chroma(0.9, 0.1, 0.1);
        let c2 = chroma(0.1, 0.9, 0.1);
        let d1 = decompose(c1, &basis).unwrap().gamma_perp;
        let d2 = decompose(c2, &basis).unwrap().gamma_perp;
        // 120° apart in the orthogonal plane, so far more than 40°.
        assert!(d1.dot(d2) < (40f64).to_radians().cos());
        let img = banded(&[c1.rgb(), c2.rgb()], 10, 10, 0.0);
        let field = specular_free_field(&img, &basis);
        let set = ClusterSet::single(&field, &basis).unwrap();
        // Arithmetic oracle: the shared center bisects the two directions,
        // so each pixel keeps a·cos(60°) of its orthogonal part and the
        // residual is a²·sin²(60°).
        let a = decompose(c1, &basis).unwrap().a;
        let expected = a * a * 0.75;
        assert!(expected > 0.1);
        let fit = evaluate_fit(&img, &set, &basis, &ClusterConfig::default());
        assert!(fit.clusters[0].failed);
        assert_eq!(fit.clusters[0].deviating_fraction, 1.0);
        assert!((fit.clusters[0].total_error - 200.0 * expected).abs() < 1e-9);
    }

    #[test]
    fn adaptive_single_material_stops_at_one() {
        let basis = IlluminationBasis::white();
        let img = banded(&[Rgb::new(0.8, 0.3, 0.2)], 40, 40, 0.6);
        let (set, fit) = adaptive_cluster(&img, &basis, &ClusterConfig::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
        assert_eq!(fit.k_history, vec![1]);
    }

    #[test]
    fn adaptive_rejects_all_gray() {
        let basis = IlluminationBasis::white();
        let img = LinearImage::filled(10, 10, Rgb::splat(0.3));
        assert!(matches!(
            adaptive_cluster(&img, &basis, &ClusterConfig::default()),
            Err(ClusterError::TooFewPixels { available: 0, .. })
        ));
    }

    #[test]
    fn small_clusters_are_merged() {
        let basis = IlluminationBasis::white();
        // 1000 red pixels, 20 orange-red pixels: the small group has to go.
        let img = LinearImage::from_fn(1020, 1, |x, _| {
            if x < 1000 {
                Rgb::new(0.9, 0.1, 0.1)
            } else {
                Rgb::new(0.9, 0.2, 0.05)
            }
        });
        let cfg = ClusterConfig { initial_k: 2, ..ClusterConfig::default() };
        let (set, _) = adaptive_cluster(&img, &basis, &cfg).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.sizes(), &[1020]);
    }

    #[test]
    fn label_levels_are_distinct() {
        let basis = IlluminationBasis::white();
        let mut img = banded(
            &[Rgb::new(0.9, 0.1, 0.1), Rgb::new(0.1, 0.9, 0.1), Rgb::new(0.1, 0.1, 0.9)],
            2,
            2,
            0.0,
        );
        img.set(0, 0, Rgb::ZERO);
        let f = specular_free_field(&img, &basis);
        let set = kmeans(&f, 3, 0, &basis, 100).unwrap();
        let levels = set.label_levels();
        assert_eq!(levels[0], 255);
        let mut distinct: Vec<u8> = levels[1..].to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct, vec![0, 127, 254]);
    }
}

use proptest::prelude::*;

use unglare_core::cluster::{kmeans, specular_free_field, PixelLabel};
use unglare_core::eval::{cluster_accuracy, psnr, Psnr};
use unglare_core::model::{
    decompose, l2_chromaticity, project_onto, restore_illuminant, unit_circle_residual,
    white_balance, Chromaticity, IlluminationBasis,
};
use unglare_core::pipeline::{remove_highlights, Illumination, PipelineConfig};
use unglare_core::recovery::{separate_pixel, MaterialModel};
use unglare_core::synth::{render, Layout, Lobe, MaterialSpec, SceneSpec};
use unglare_core::{LinearImage, Rgb};

fn rgb() -> impl Strategy<Value = Rgb> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(r, g, b)| Rgb::new(r, g, b))
}

/// Nonnegative colors at least a few degrees away from gray.
fn body_color() -> impl Strategy<Value = Chromaticity> {
    rgb().prop_filter_map("near gray or black", |v| {
        let c = l2_chromaticity(v).ok()?;
        let b = c.rgb().dot(Rgb::splat(1.0 / 3f64.sqrt()));
        (b < 0.999).then_some(c)
    })
}

fn illuminant() -> impl Strategy<Value = Chromaticity> {
    (0.3..1.0f64, 0.3..1.0f64, 0.3..1.0f64)
        .prop_map(|(r, g, b)| l2_chromaticity(Rgb::new(r, g, b)).unwrap())
}

proptest! {
    #[test]
    fn exact_pixels_lie_on_the_unit_circle(
        lambda in body_color(),
        gamma in illuminant(),
        alpha in 0.01..2.0f64,
        beta in 0.0..2.0f64,
    ) {
        let basis = IlluminationBasis::new(gamma);
        let Ok(d) = decompose(lambda, &basis) else { return Ok(()) };
        prop_assert!((d.a * d.a + d.b * d.b - 1.0).abs() <= 1e-9);
        let pixel = l2_chromaticity(lambda.rgb() * alpha + gamma.rgb() * beta).unwrap();
        let coeffs = project_onto(pixel, d.gamma_perp, &basis);
        prop_assert!(unit_circle_residual(coeffs).abs() <= 1e-9);
    }

    #[test]
    fn separation_is_additive_and_nonnegative(
        pixel in rgb(),
        center_src in body_color(),
        gamma_d in 0.05..0.995f64,
    ) {
        let basis = IlluminationBasis::white();
        let center = decompose(center_src, &basis).unwrap().gamma_perp;
        let model = MaterialModel::new(center, gamma_d, &basis).unwrap();
        let (d, s) = separate_pixel(pixel, &model, &basis);
        prop_assert!((d + s).max_abs_diff(pixel) <= 1e-12);
        prop_assert!(d.min_component() >= 0.0 && s.min_component() >= 0.0);
    }

    #[test]
    fn white_balance_round_trips(pixel in rgb(), illum in illuminant()) {
        let img = LinearImage::filled(1, 1, pixel);
        let back = restore_illuminant(&white_balance(&img, illum).unwrap(), illum).unwrap();
        prop_assert!(back.pixels()[0].max_abs_diff(pixel) <= 1e-12);
    }

    #[test]
    fn psnr_decreases_with_uniform_error(e1 in 1e-6..0.5f64, extra in 1e-6..0.5f64) {
        let truth = LinearImage::filled(3, 2, Rgb::splat(0.25));
        let near = LinearImage::filled(3, 2, Rgb::splat(0.25 + e1));
        let far = LinearImage::filled(3, 2, Rgb::splat(0.25 + e1 + extra));
        let (pn, pf) = (psnr(&near, &truth).unwrap(), psnr(&far, &truth).unwrap());
        prop_assert!(pn > pf);
        prop_assert!(matches!(pn, Psnr::Finite(_)));
    }

    #[test]
    fn accuracy_ignores_label_permutations(
        labels in prop::collection::vec(0u32..5, 1..200),
        truth_seed in prop::collection::vec(0u32..3, 1..200),
        perm in Just([3u32, 0, 4, 1, 2]).prop_shuffle(),
    ) {
        let n = labels.len().min(truth_seed.len());
        let truth = &truth_seed[..n];
        let a: Vec<PixelLabel> = labels[..n].iter().map(|&l| PixelLabel::Cluster(l)).collect();
        let b: Vec<PixelLabel> = labels[..n].iter().map(|&l| PixelLabel::Cluster(perm[l as usize])).collect();
        let (x, y) = (cluster_accuracy(&a, truth).unwrap(), cluster_accuracy(&b, truth).unwrap());
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn rendered_pixels_follow_the_model(
        lambda in body_color(),
        gamma in illuminant(),
        peak in 0.0..1.5f64,
        diffuse in 0.05..1.0f64,
    ) {
        let spec = SceneSpec {
            name: "prop".into(),
            width: 24,
            height: 16,
            illumination: gamma,
            layout: Layout::Single,
            materials: vec![MaterialSpec::plain(lambda)],
            diffuse,
            shading: 0.3,
            lobes: vec![Lobe { cx: 0.4, cy: 0.5, sigma: 0.15, peak }],
            pddr_valid: true,
        };
        let gt = render(&spec).unwrap();
        for i in 0..gt.input.len() {
            let input = gt.input.pixels()[i];
            prop_assert_eq!(input, gt.diffuse.pixels()[i] + gt.specular.pixels()[i]);
            let norm = input.norm();
            let alpha = gt.diffuse_magnitude[i] / norm;
            let beta = gt.specular_magnitude[i] / norm;
            let model = lambda.rgb() * alpha + gamma.rgb() * beta;
            prop_assert!(model.max_abs_diff(input * (1.0 / norm)) <= 1e-12);
        }
    }

    #[test]
    fn pipeline_output_is_additive(
        pixels in prop::collection::vec(rgb(), 64),
        illum in illuminant(),
        divide in any::<bool>(),
    ) {
        let img = LinearImage::new(8, 8, pixels).unwrap();
        let cfg = PipelineConfig {
            illumination: if divide { Illumination::Divide(illum) } else { Illumination::Chromaticity(illum) },
            ..PipelineConfig::default()
        };
        let out = remove_highlights(&img, &cfg).unwrap();
        for (i, p) in img.pixels().iter().enumerate() {
            let d = out.separation.diffuse.pixels()[i];
            let s = out.separation.specular.pixels()[i];
            prop_assert!((d + s).max_abs_diff(*p) <= 1e-12);
            prop_assert!(d.min_component() >= 0.0 && s.min_component() >= 0.0);
        }
    }
}

#[test]
fn kmeans_is_deterministic_per_seed() {
    let img = LinearImage::from_fn(40, 30, |x, y| {
        Rgb::new(0.2 + 0.6 * ((x * 7 + y * 3) % 11) as f64 / 11.0, 0.3, 0.1 + 0.02 * (y % 5) as f64)
    });
    let basis = IlluminationBasis::white();
    let field = specular_free_field(&img, &basis);
    let a = kmeans(&field, 4, 11, &basis, 100).unwrap();
    let b = kmeans(&field, 4, 11, &basis, 100).unwrap();
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.centers(), b.centers());
}

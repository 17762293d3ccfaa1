use super::*;
use crate::field::CameraPose;
use crate::math::Vec3;
use crate::raster::{psnr, Image};
use crate::texproj::{build_textured_cloud, TexturedPointCloud, ViewImage, ViewImageSet};
use proptest::prelude::*;

const R: f64 = 0.5;
const PX: usize = 48;

fn albedo(p: Vec3) -> [f64; 3] {
    [
        0.5 + 0.3 * (4.0 * p.x).sin(),
        0.5 + 0.3 * (3.0 * p.y).cos(),
        0.5 + 0.3 * (5.0 * p.z).sin(),
    ]
}

/// Pixel-center ray cast against the textured sphere on a white background.
fn truth(cam: &CameraPose) -> (Image, Image) {
    let basis = cam.basis();
    let mut rgb = Image::filled(cam.width, cam.height, 3, 1.0);
    let mut mask = Image::new(cam.width, cam.height, 1);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = cam.pixel_ray(&basis, x, y);
            let b = ray.origin.dot(ray.dir);
            let disc = b * b - (ray.origin.norm_squared() - R * R);
            if disc >= 0.0 {
                let p = ray.origin + ray.dir * (-b - disc.sqrt());
                rgb.pixel_mut(x, y).copy_from_slice(&albedo(p));
                mask.set(x, y, 0, 1.0);
            }
        }
    }
    (rgb, mask)
}

fn camera(az: f64) -> CameraPose {
    CameraPose::new(az, 0.1, 2.5, 0.6, PX, PX).unwrap()
}

fn sphere_cloud(n: usize) -> TexturedPointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            Vec3::new(r * th.cos(), y, r * th.sin()) * R
        })
        .collect();
    let spacing = (4.0 * std::f64::consts::PI * R * R / n as f64).sqrt();
    TexturedPointCloud::new(pts.clone(), spacing).unwrap().with_normals(pts).unwrap()
}

fn view(cam: CameraPose, image: Image) -> ViewImage {
    let (_, mask) = truth(&cam);
    ViewImage { camera: cam, image, mask }
}

#[test]
fn single_point_reproduces_its_color() {
    let cam = camera(0.0);
    let mut cloud = TexturedPointCloud::new(vec![Vec3::ZERO], 0.05).unwrap();
    cloud.claim(0, [0.2, 0.6, 0.9], 0);
    let fc = FeatureCloud::from_textured(cloud, [0.5; 3]);
    let plan = SplatPlan::build(&fc.cloud, &cam, 1.0).unwrap();
    let out = splat_render(&fc, &plan, &DeferredRenderer::new(0, [1.0; 3])).unwrap();
    let basis = cam.basis();
    let p = cam.project(&basis, Vec3::ZERO).unwrap().pixel(PX, PX).unwrap();
    let got = out.rgb.pixel(p.0, p.1);
    for (g, w) in got.iter().zip([0.2, 0.6, 0.9]) {
        assert!((g - w).abs() < 1e-4, "{got:?}");
    }
}

#[test]
fn empty_cloud_renders_background() {
    let cam = camera(0.0);
    let fc = FeatureCloud::from_textured(TexturedPointCloud::new(vec![], 0.05).unwrap(), [0.5; 3]);
    let plan = SplatPlan::build(&fc.cloud, &cam, 1.0).unwrap();
    assert!(fc.is_empty());
    let bg = [0.9, 0.8, 0.7];
    let out = splat_render(&fc, &plan, &DeferredRenderer::new(0, bg)).unwrap();
    assert!(out.features.data().iter().all(|&v| v == 0.0));
    for px in out.rgb.data().chunks(3) {
        assert!(px.iter().zip(bg).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}

#[test]
fn feature_gradient_matches_finite_differences() {
    use rand::{Rng, SeedableRng};
    let cam = camera(0.4);
    let mut fc = FeatureCloud::from_textured(sphere_cloud(800), [0.4, 0.5, 0.6]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for f in fc.features_mut() {
        *f += rng.random_range(-0.05..0.05);
    }
    let mut renderer = DeferredRenderer::new(2, [1.0; 3]);
    for p in renderer.params_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    let plan = SplatPlan::build(&fc.cloud, &cam, 1.0).unwrap();
    let (target, _) = truth(&cam);
    let loss = |fc: &FeatureCloud| {
        let rgb = splat_render(fc, &plan, &renderer).unwrap().rgb;
        crate::raster::mse(&rgb, &target).unwrap()
    };
    let render = splat_render(&fc, &plan, &renderer).unwrap();
    let n = render.rgb.data().len() as f64;
    let d_rgb = render.rgb.zip_map(&target, |a, b| 2.0 * (a - b) / n).unwrap();
    let (d_feat, _) = splat_render_backward(&fc, &plan, &renderer, &render, &d_rgb).unwrap();
    // a point near the image center
    let basis = cam.basis();
    let i = (0..fc.len())
        .filter(|&i| !plan.pixel(PX / 2, PX / 2).is_empty() && plan.pixel(PX / 2, PX / 2).iter().any(|e| e.0 == i))
        .next()
        .or_else(|| {
            (0..fc.len()).min_by(|&a, &b| {
                let da = cam.project(&basis, fc.cloud.positions()[a]).unwrap();
                let db = cam.project(&basis, fc.cloud.positions()[b]).unwrap();
                let c = PX as f64 / 2.0;
                ((da.px - c).hypot(da.py - c)).total_cmp(&(db.px - c).hypot(db.py - c))
            })
        })
        .unwrap();
    let h = 1e-5;
    for k in 0..FEATURES {
        let idx = i * FEATURES + k;
        let mut a = fc.clone();
        a.features_mut()[idx] += h;
        let mut b = fc.clone();
        b.features_mut()[idx] -= h;
        let numeric = (loss(&a) - loss(&b)) / (2.0 * h);
        let analytic = d_feat[idx];
        let scale = numeric.abs().max(analytic.abs()).max(1e-9);
        assert!((numeric - analytic).abs() / scale < 1e-2, "channel {k}: {analytic} vs {numeric}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn weights_sum_to_one(az in 0.0f64..6.28, el in -0.8f64..0.8, n in 50usize..600) {
        let cloud = sphere_cloud(n);
        let cam = CameraPose::new(az, el, 2.5, 0.6, 24, 24).unwrap();
        let plan = SplatPlan::build(&cloud, &cam, 1.0).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let e = plan.pixel(x, y);
                if !e.is_empty() {
                    let s: f64 = e.iter().map(|v| v.1).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

fn textured_setup() -> (FeatureCloud, RefineTarget, Vec<RefineTarget>) {
    let mut cloud = sphere_cloud(4000);
    let ref_cam = camera(0.0);
    let (ref_img, _) = truth(&ref_cam);
    // blurred stand-ins for coarse renders of the novel views
    let novel: Vec<CameraPose> = (1..4).map(|k| camera(k as f64 * std::f64::consts::FRAC_PI_2)).collect();
    let mut views = vec![view(ref_cam, ref_img.clone())];
    for cam in &novel {
        let (img, _) = truth(cam);
        views.push(view(*cam, img.map(|v| 0.5 + 0.4 * (v - 0.5))));
    }
    build_textured_cloud(&mut cloud, &ViewImageSet::new(views).unwrap()).unwrap();
    let fc = FeatureCloud::from_textured(cloud, [0.5; 3]);
    let targets = novel
        .iter()
        .map(|c| RefineTarget {
            camera: *c,
            image: truth(c).0,
        })
        .collect();
    (fc, RefineTarget { camera: ref_cam, image: ref_img }, targets)
}

fn mean_psnr(fc: &FeatureCloud, r: &DeferredRenderer, targets: &[RefineTarget]) -> f64 {
    targets
        .iter()
        .map(|t| {
            let plan = SplatPlan::build(&fc.cloud, &t.camera, 1.0).unwrap();
            psnr(&splat_render(fc, &plan, r).unwrap().rgb, &t.image).unwrap()
        })
        .sum::<f64>()
        / targets.len() as f64
}

#[test]
fn reference_rerender_is_faithful() {
    let (fc, reference, _) = textured_setup();
    let p = mean_psnr(&fc, &DeferredRenderer::new(0, [1.0; 3]), std::slice::from_ref(&reference));
    assert!(p >= 25.0, "reference PSNR {p}");
}

#[test]
fn zero_steps_change_nothing() {
    let (fc, reference, targets) = textured_setup();
    let r = DeferredRenderer::new(4, [1.0; 3]);
    let config = RefineConfig {
        steps: 0,
        ..RefineConfig::default()
    };
    let (fc2, r2, log) = optimize_refine(fc.clone(), r.clone(), &reference, &targets, &config).unwrap();
    assert_eq!(fc2, fc);
    assert_eq!(r2, r);
    assert!(log.step_losses.is_empty());
}

#[test]
fn refinement_improves_novel_views_and_keeps_reference() {
    let (fc, reference, targets) = textured_setup();
    let r = DeferredRenderer::new(4, [1.0; 3]);
    let before_novel = mean_psnr(&fc, &r, &targets);
    let before_ref = mean_psnr(&fc, &r, std::slice::from_ref(&reference));
    let config = RefineConfig {
        steps: 300,
        eval_every: 50,
        ..RefineConfig::default()
    };
    let (fc2, r2, log) = optimize_refine(fc.clone(), r, &reference, &targets, &config).unwrap();
    let after_novel = mean_psnr(&fc2, &r2, &targets);
    let after_ref = mean_psnr(&fc2, &r2, std::slice::from_ref(&reference));
    assert!(after_novel >= before_novel + 2.0, "novel {before_novel} -> {after_novel}");
    assert!(after_ref >= before_ref - 0.1, "reference {before_ref} -> {after_ref}");
    for w in log.objective.windows(2) {
        assert!(w[1].1 <= w[0].1, "objective rose: {:?}", log.objective);
    }
    for i in 0..fc.len() {
        if fc.is_frozen(i) {
            assert_eq!(fc.feature(i)[..3], fc2.feature(i)[..3]);
        }
    }
    assert!((0..fc.len()).any(|i| fc.is_frozen(i)));
}

#[test]
fn feature_ply_round_trip() {
    let (fc, _, _) = textured_setup();
    let bytes = fc.to_ply().to_bytes().unwrap();
    let table = crate::ply::PlyTable::from_bytes(&bytes).unwrap();
    let back = FeatureCloud::from_ply(&table, fc.cloud.splat_radius, fc.cloud.depth_epsilon).unwrap();
    assert_eq!(back.to_ply().to_bytes().unwrap(), bytes);
    assert_eq!(back.len(), fc.len());
    assert!(back.features().iter().zip(fc.features()).all(|(a, b)| (a - b).abs() < 1e-6));
}


//! End-to-end checks on the toy locomotive fixture: render, label, evaluate.

use watchforge_core::evalkit::{evaluate, Gallery, GroundTruth};
use watchforge_core::geometry::{pose_from_viewpoint, CameraPose};
use watchforge_core::imgproc::PixelBox;
use watchforge_core::labelgen::{annotate_set, LabelGenConfig};
use watchforge_core::losses::{NormBox, PoseAngles};
use watchforge_core::render::{render_set, render_viewpoint, RenderConfig};
use watchforge_core::sampling::{generate, StrategyKind, StrategySpec};
use watchforge_core::scene::{bake, toy_locomotive, BakeConfig, Primitive, VoxelScene};
use watchforge_core::Viewpoint;

const GAMMA: f64 = 4.0;

fn fixture() -> (Vec<Primitive>, VoxelScene) {
    let prims = toy_locomotive();
    let scene = bake(&prims, &BakeConfig::default()).unwrap();
    (prims, scene)
}

/// Oracle: box of the pixels whose center ray crosses any primitive, from
/// exact ray/solid intersection rather than the voxel cache.
fn silhouette_bbox(prims: &[Primitive], pose: &CameraPose) -> Option<PixelBox> {
    let k = pose.intrinsics;
    let mut b: Option<PixelBox> = None;
    for py in 0..k.height {
        for px in 0..k.width {
            let ray = pose.ray_for_pixel(px, py);
            if !prims.iter().any(|p| p.intersect_ray(&ray).is_some_and(|(a, z)| z > a)) {
                continue;
            }
            b = Some(match b {
                None => PixelBox::new(px, py, px, py).unwrap(),
                Some(b) => PixelBox::new(b.x_min.min(px), b.y_min.min(py), b.x_max.max(px), b.y_max.max(py)).unwrap(),
            });
        }
    }
    b
}

#[test]
fn loop_labels_match_analytic_silhouettes() {
    let (prims, scene) = fixture();
    let cfg = RenderConfig::default();
    let views = generate(&StrategySpec::grid(StrategyKind::Loop, 10.0, 30.0, GAMMA)).unwrap();
    let images = render_set(&scene, &views, &cfg).unwrap();
    let (occ, anns) = annotate_set(&images, &LabelGenConfig::default()).unwrap();

    let valid = anns.iter().filter(|a| a.valid).count();
    println!("occ {occ:?}, valid {valid}/{}", anns.len());
    assert!(valid as f64 >= 0.95 * anns.len() as f64);

    let mut worst = 0u32;
    for (img, ann) in images.iter().zip(&anns) {
        let Some(b) = ann.bbox else { continue };
        let truth = silhouette_bbox(&prims, &img.pose).unwrap();
        let dev = b
            .to_array()
            .iter()
            .zip(truth.to_array())
            .map(|(a, t)| a.abs_diff(t))
            .max()
            .unwrap();
        worst = worst.max(dev);
        assert!(dev <= 2, "view {:?}: box {b:?} vs silhouette {truth:?}", img.viewpoint);
        // accepted boxes really pass the ratio test
        let inter = b.intersection(&occ).map_or(0, |i| i.area());
        assert!(inter as f64 / b.area() as f64 > 0.75);
    }
    println!("worst edge deviation {worst} px");
}

#[test]
fn doubling_sample_rate_barely_changes_pixels() {
    let (_, scene) = fixture();
    let cfg = RenderConfig::default();
    let fine = RenderConfig {
        samples_per_unit: 2.0 * cfg.samples_per_unit,
        ..cfg
    };
    let mut worst = 0u8;
    for v in generate(&StrategySpec::grid(StrategyKind::Loop, 45.0, 45.0, GAMMA)).unwrap() {
        let a = render_viewpoint(&scene, &v, &cfg).pixels;
        let b = render_viewpoint(&scene, &v, &fine).pixels;
        for (pa, pb) in a.as_raw().iter().zip(b.as_raw()) {
            worst = worst.max(pa.abs_diff(*pb));
        }
    }
    println!("worst channel change {worst}");
    assert!(worst <= 3, "worst channel change {worst}");
}

fn gallery_for(scene: &VoxelScene, spec: &StrategySpec) -> Gallery {
    let cfg = RenderConfig::default();
    let views = generate(spec).unwrap();
    let images = render_set(scene, &views, &cfg).unwrap();
    let (_, anns) = annotate_set(&images, &LabelGenConfig::default()).unwrap();
    let items: Vec<_> = images.iter().map(|i| &i.pixels).zip(&anns).collect();
    Gallery::new(&items).unwrap()
}

fn evaluate_queries(scene: &VoxelScene, gallery: &Gallery, seed: u64) -> watchforge_core::evalkit::EvalReport {
    let cfg = RenderConfig::default();
    let views = generate(&StrategySpec::random(200, GAMMA, seed)).unwrap();
    let images = render_set(scene, &views, &cfg).unwrap();
    let (_, anns) = annotate_set(&images, &LabelGenConfig::default()).unwrap();
    let gts: Vec<GroundTruth> = anns
        .iter()
        .map(|a| GroundTruth {
            bbox: a.bbox.map(|b| NormBox::from_pixels(&b, cfg.width, cfg.height)),
            pose: PoseAngles::from(a.viewpoint),
        })
        .collect();
    let preds: Vec<_> = images.iter().map(|i| vec![gallery.nearest(&i.pixels).detection]).collect();
    evaluate(&preds, &gts).unwrap()
}

#[test]
fn denser_gallery_is_not_worse() {
    let (_, scene) = fixture();
    let g144 = gallery_for(&scene, &StrategySpec::grid(StrategyKind::Loop, 10.0, 30.0, GAMMA));
    let g288 = gallery_for(&scene, &StrategySpec::grid(StrategyKind::Loop, 5.0, 30.0, GAMMA));
    for seed in 1..=5 {
        let r144 = evaluate_queries(&scene, &g144, seed);
        let r288 = evaluate_queries(&scene, &g288, seed);
        println!("seed {seed}: 144 -> {r144:?}\n        288 -> {r288:?}");
        assert!(r288.ave_theta <= r144.ave_theta);
    }
}

#[test]
fn gallery_round_trip_is_exact() {
    let (_, scene) = fixture();
    let cfg = RenderConfig::default();
    let views = generate(&StrategySpec::grid(StrategyKind::Loop, 30.0, 30.0, GAMMA)).unwrap();
    let images = render_set(&scene, &views, &cfg).unwrap();
    let (_, anns) = annotate_set(&images, &LabelGenConfig::default()).unwrap();
    let items: Vec<_> = images.iter().map(|i| &i.pixels).zip(&anns).collect();
    let gallery = Gallery::new(&items).unwrap();
    let (preds, gts): (Vec<_>, Vec<_>) = images
        .iter()
        .zip(&anns)
        .filter(|(_, a)| a.valid)
        .map(|(img, a)| {
            let gt = GroundTruth {
                bbox: a.bbox.map(|b| NormBox::from_pixels(&b, cfg.width, cfg.height)),
                pose: a.viewpoint.into(),
            };
            (vec![gallery.nearest(&img.pixels).detection], gt)
        })
        .unzip();
    let r = evaluate(&preds, &gts).unwrap();
    assert_eq!(r.map_50, 1.0);
    assert_eq!((r.ave_theta, r.ave_phi, r.ave_gamma), (0.0, 0.0, 0.0));
}

#[test]
fn midway_query_retrieves_a_neighbour() {
    let (_, scene) = fixture();
    let cfg = RenderConfig::default();
    let gallery_views: Vec<Viewpoint> = [0.0, 20.0, 40.0, 60.0, 80.0]
        .iter()
        .map(|&t| Viewpoint::new(t, 30.0, GAMMA).unwrap())
        .collect();
    let images = render_set(&scene, &gallery_views, &cfg).unwrap();
    let (_, anns) = annotate_set(&images, &LabelGenConfig::default()).unwrap();
    let items: Vec<_> = images.iter().map(|i| &i.pixels).zip(&anns).collect();
    let gallery = Gallery::new(&items).unwrap();

    let query = render_viewpoint(&scene, &Viewpoint::new(30.0, 30.0, GAMMA).unwrap(), &cfg);
    let m = gallery.nearest(&query.pixels);
    // brute-force scan of the same thumbnail distances
    let q = watchforge_core::evalkit::thumbnail(&query.pixels);
    let dists: Vec<f64> = images
        .iter()
        .map(|i| {
            let t = watchforge_core::evalkit::thumbnail(&i.pixels);
            t.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .collect();
    let best = (0..dists.len()).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
    assert_eq!(m.gallery_index, best);
    assert!([1, 2].contains(&m.gallery_index), "picked {}", m.gallery_index);
    let _ = pose_from_viewpoint;
}

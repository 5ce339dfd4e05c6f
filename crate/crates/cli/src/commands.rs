//! Subcommand implementations.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use watchforge_core::augment::synthesize_checking_set;
use watchforge_core::evalkit::{evaluate, EvalReport, Gallery, GroundTruth};
use watchforge_core::geometry::pose_from_viewpoint;
use watchforge_core::labelgen::annotate_set;
use watchforge_core::losses::{NormBox, PoseAngles};
use watchforge_core::render::render_set;
use watchforge_core::sampling::generate;
use watchforge_core::scene::bake;
use watchforge_core::{Annotation, RenderedImage, StrategyKind, StrategySpec, VoxelScene};

use crate::config::{Group, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{
    to_json, write_file, CompositeManifest, CompositeRecord, Dataset, DatasetManifest, GlobalRow,
    ImageRecord, ResultRow, ResultsFile, StrategyEcho, COMPOSITE_FILE, FORMAT_VERSION,
    MANIFEST_FILE, RESULTS_FILE,
};
use crate::scene_file::load_scene;

pub const LOCK_FILE: &str = ".watchforge.lock";
pub const TABLE_FILE: &str = "results.txt";

/// Advisory lock on an output directory, removed on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Io(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn bake_scene(cfg: &RunConfig) -> CliResult<VoxelScene> {
    let prims = load_scene(cfg.require_scene()?)?;
    Ok(bake(&prims, &cfg.bake)?)
}

/// Renders and annotates one strategy's viewpoint set.
fn watch_set(
    scene: &VoxelScene,
    spec: &StrategySpec,
    cfg: &RunConfig,
) -> CliResult<(Vec<RenderedImage>, watchforge_core::PixelBox, Vec<Annotation>)> {
    let views = generate(spec)?;
    let images = render_set(scene, &views, &cfg.render)?;
    let (occ, anns) = annotate_set(&images, &cfg.labelgen)?;
    Ok((images, occ, anns))
}

fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::io(path, e))
}

pub fn view_file_name(i: usize) -> String {
    format!("view_{i:04}.png")
}

/// Bakes, renders, annotates and writes a dataset. Returns the manifest.
pub fn watch(cfg: &RunConfig) -> CliResult<DatasetManifest> {
    cfg.validate()?;
    let out = cfg.require_output()?;
    let scene = bake_scene(cfg)?;
    let _lock = OutputLock::acquire(out)?;

    let spec = cfg.strategy_spec();
    let (images, occ, anns) = watch_set(&scene, &spec, cfg)?;

    images
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| save_png(&img.pixels, &out.join(view_file_name(i))))?;

    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        strategy: StrategyEcho {
            kind: spec.kind,
            theta_step: if spec.kind == StrategyKind::Random { 0.0 } else { spec.theta_step },
            phi_step: if spec.kind == StrategyKind::Random { 0.0 } else { spec.phi_step },
            count: images.len(),
            gamma: spec.gamma,
        },
        width: cfg.render.width,
        height: cfg.render.height,
        seed: cfg.seed,
        occ_region: occ.to_array(),
        records: anns
            .iter()
            .enumerate()
            .map(|(i, a)| ImageRecord::from_annotation(view_file_name(i), a))
            .collect(),
    };
    write_file(&out.join(MANIFEST_FILE), to_json(&manifest))?;
    Ok(manifest)
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Loads every PNG/JPEG in `dir`, sorted by file name.
pub fn load_backgrounds(dir: &Path) -> CliResult<Vec<(String, RgbImage)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "backgrounds directory {} has no PNG or JPEG images",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let img = image::open(p).map_err(|e| CliError::io(p, e))?.into_rgb8();
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, img))
        })
        .collect()
}

pub fn composite_file_name(i: usize) -> String {
    format!("composite_{i:04}.png")
}

/// Pastes annotated objects of a watch dataset onto backgrounds.
pub fn compose(cfg: &RunConfig) -> CliResult<CompositeManifest> {
    cfg.validate()?;
    let out = cfg.require_output()?;
    let src = cfg
        .dataset_dir
        .as_deref()
        .ok_or_else(|| CliError::Config("no source dataset given (--dataset or dataset =)".into()))?;
    let bg_dir = cfg
        .backgrounds_dir
        .as_deref()
        .ok_or_else(|| CliError::Config("no backgrounds directory given (--backgrounds)".into()))?;
    let backgrounds = load_backgrounds(bg_dir)?;
    let dataset = Dataset::load(src)?;
    let anns = dataset.annotations()?;

    let intrinsics = watchforge_core::Intrinsics {
        focal: cfg.render.focal,
        width: dataset.manifest.width,
        height: dataset.manifest.height,
    };
    let rendered: Vec<RenderedImage> = dataset
        .images
        .iter()
        .zip(&anns)
        .map(|(img, a)| RenderedImage {
            pixels: img.clone(),
            viewpoint: a.viewpoint,
            pose: pose_from_viewpoint(&a.viewpoint, intrinsics),
        })
        .collect();
    let sources: Vec<(&RenderedImage, &Annotation)> = rendered.iter().zip(&anns).collect();
    let bg_images: Vec<RgbImage> = backgrounds.iter().map(|(_, i)| i.clone()).collect();

    let _lock = OutputLock::acquire(out)?;
    let set = synthesize_checking_set(&sources, &bg_images, cfg.n, &cfg.augment_spec())?;
    set.samples
        .par_iter()
        .enumerate()
        .try_for_each(|(i, s)| save_png(&s.image, &out.join(composite_file_name(i))))?;

    let manifest = CompositeManifest {
        version: FORMAT_VERSION,
        seed: cfg.seed,
        requested: cfg.n,
        skipped: set.skipped,
        records: set
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| CompositeRecord {
                file: composite_file_name(i),
                background: backgrounds[s.background_index].0.clone(),
                bbox: s.bbox.to_array(),
            })
            .collect(),
    };
    write_file(&out.join(COMPOSITE_FILE), to_json(&manifest))?;
    Ok(manifest)
}

/// Query images with their ground truth.
pub struct QuerySet {
    pub images: Vec<RgbImage>,
    pub truths: Vec<GroundTruth>,
}

impl QuerySet {
    pub fn new(images: Vec<RgbImage>, anns: &[Annotation]) -> Self {
        let truths = images
            .iter()
            .zip(anns)
            .map(|(img, a)| GroundTruth {
                bbox: a
                    .bbox
                    .filter(|_| a.valid)
                    .map(|b| NormBox::from_pixels(&b, img.width(), img.height())),
                pose: PoseAngles::from(a.viewpoint),
            })
            .collect();
        Self { images, truths }
    }

    fn dimensions(&self) -> Option<(u32, u32)> {
        self.images.first().map(RgbImage::dimensions)
    }
}

/// Runs the nearest-view baseline for every query.
pub fn evaluate_gallery(gallery: &Gallery, queries: &QuerySet) -> CliResult<EvalReport> {
    let preds: Vec<_> = queries
        .images
        .par_iter()
        .map(|q| vec![gallery.nearest(q).detection])
        .collect();
    Ok(evaluate(&preds, &queries.truths)?)
}

fn step_label(kind: StrategyKind, theta_step: f64, phi_step: f64) -> Option<String> {
    (kind != StrategyKind::Random).then(|| format!("θ {theta_step} / φ {phi_step}"))
}

fn row(strategy: &str, view_points: usize, step: Option<String>, r: &EvalReport) -> ResultRow {
    ResultRow {
        strategy: strategy.into(),
        view_points,
        step,
        map_50: r.map_50,
        ave_theta: r.ave_theta,
        ave_phi: r.ave_phi,
        ave_gamma: r.ave_gamma,
        n_images: r.n_images,
        n_excluded: r.n_excluded,
    }
}

fn capitalized(kind: StrategyKind) -> String {
    let n = kind.name();
    n[..1].to_ascii_uppercase() + &n[1..]
}

/// Evaluates each gallery dataset against a query dataset, or against its own
/// enrolled images when `query` is `None`.
pub fn eval(galleries: &[PathBuf], query: Option<&Path>, out: Option<&Path>) -> CliResult<ResultsFile> {
    if galleries.is_empty() {
        return Err(CliError::Config("eval needs at least one gallery dataset".into()));
    }
    let shared = query
        .map(|q| -> CliResult<QuerySet> {
            let d = Dataset::load(q)?;
            let anns = d.annotations()?;
            Ok(QuerySet::new(d.images, &anns))
        })
        .transpose()?;

    let mut rows = Vec::new();
    for dir in galleries {
        let d = Dataset::load(dir)?;
        let anns = d.annotations()?;
        let items: Vec<_> = d.images.iter().zip(&anns).collect();
        let gallery = Gallery::new(&items)?;
        let own;
        let queries = match &shared {
            Some(q) => q,
            None => {
                let (imgs, valid): (Vec<RgbImage>, Vec<Annotation>) = d
                    .images
                    .iter()
                    .zip(&anns)
                    .filter(|(_, a)| a.valid)
                    .map(|(i, a)| (i.clone(), *a))
                    .unzip();
                own = QuerySet::new(imgs, &valid);
                &own
            }
        };
        if queries.dimensions() != Some((d.manifest.width, d.manifest.height)) {
            return Err(CliError::Pipeline(format!(
                "query images {:?} do not match gallery {} ({}x{})",
                queries.dimensions(),
                dir.display(),
                d.manifest.width,
                d.manifest.height
            )));
        }
        let report = evaluate_gallery(&gallery, queries)?;
        let s = &d.manifest.strategy;
        rows.push(row(
            &capitalized(s.kind),
            d.manifest.records.len(),
            step_label(s.kind, s.theta_step, s.phi_step),
            &report,
        ));
    }
    let results = ResultsFile {
        version: FORMAT_VERSION,
        queries: rows.first().map_or(0, |r| r.n_images),
        rows,
        global: Vec::new(),
    };
    if let Some(out) = out {
        write_results(out, &results)?;
    }
    Ok(results)
}

fn write_results(out: &Path, results: &ResultsFile) -> CliResult<()> {
    let _lock = OutputLock::acquire(out)?;
    write_file(&out.join(RESULTS_FILE), to_json(results))?;
    write_file(&out.join(TABLE_FILE), format_table(results))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let mut xs: Vec<f64> = v.collect();
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-strategy means over the parameter groups.
pub fn global_rows(rows: &[ResultRow]) -> Vec<GlobalRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.strategy.as_str()) {
            names.push(&r.strategy);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs = || rows.iter().filter(move |r| r.strategy == name);
            GlobalRow {
                strategy: name.into(),
                map_50: mean(rs().map(|r| r.map_50)),
                ave_theta: mean(rs().map(|r| r.ave_theta)),
                ave_phi: mean(rs().map(|r| r.ave_phi)),
                ave_gamma: mean(rs().map(|r| r.ave_gamma)),
            }
        })
        .collect()
}

/// Compares Loop, Helix and Random over each configured step group on one
/// shared random query set. Random galleries match the grid's view count.
pub fn strategy_compare(cfg: &RunConfig, query: Option<&Path>) -> CliResult<ResultsFile> {
    cfg.validate()?;
    if cfg.compare_groups.is_empty() {
        return Err(CliError::Config("compare_groups is empty".into()));
    }
    let scene = bake_scene(cfg)?;
    let gamma = cfg.strategy.gamma;

    let queries = match query {
        Some(dir) => {
            let d = Dataset::load(dir)?;
            let anns = d.annotations()?;
            QuerySet::new(d.images, &anns)
        }
        None => {
            if cfg.compare_queries == 0 {
                return Err(CliError::Config("compare_queries must be >= 1".into()));
            }
            let spec = StrategySpec::random(cfg.compare_queries, gamma, cfg.query_seed());
            let (images, _, anns) = watch_set(&scene, &spec, cfg)?;
            QuerySet::new(images.into_iter().map(|i| i.pixels).collect(), &anns)
        }
    };
    if queries.dimensions() != Some((cfg.render.width, cfg.render.height)) {
        return Err(CliError::Pipeline(format!(
            "query set images {:?} do not match the render size {}x{}",
            queries.dimensions(),
            cfg.render.width,
            cfg.render.height
        )));
    }

    let mut rows = Vec::new();
    for &Group { theta_step, phi_step } in &cfg.compare_groups {
        let grid = StrategySpec::grid(StrategyKind::Loop, theta_step, phi_step, gamma);
        let n = grid.viewpoint_count()?;
        for kind in [StrategyKind::Loop, StrategyKind::Helix, StrategyKind::Random] {
            let spec = match kind {
                StrategyKind::Random => StrategySpec::random(n, gamma, cfg.seed),
                _ => StrategySpec { kind, ..grid },
            };
            let (images, _, anns) = watch_set(&scene, &spec, cfg)?;
            let items: Vec<_> = images.iter().map(|i| &i.pixels).zip(&anns).collect();
            let gallery = Gallery::new(&items)?;
            let report = evaluate_gallery(&gallery, &queries)?;
            rows.push(row(
                &capitalized(kind),
                n,
                Some(format!("θ {theta_step} / φ {phi_step}")),
                &report,
            ));
        }
    }
    let results = ResultsFile {
        version: FORMAT_VERSION,
        queries: queries.images.len(),
        global: global_rows(&rows),
        rows,
    };
    if let Some(out) = cfg.output_dir.as_deref() {
        write_results(out, &results)?;
    }
    Ok(results)
}

/// Human-readable table: one row per evaluated gallery, then global averages.
pub fn format_table(results: &ResultsFile) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<8} {:>11}  {:<15} {:>7} {:>9} {:>9} {:>9}\n",
        "Strategy", "View Points", "Step (deg)", "mAP", "Ave θ", "Ave φ", "Ave γ"
    ));
    let mut last_step: Option<&Option<String>> = None;
    for r in &results.rows {
        if last_step.is_some_and(|p| p != &r.step) {
            s.push('\n');
        }
        last_step = Some(&r.step);
        s.push_str(&format!(
            "{:<8} {:>11}  {:<15} {:>7.3} {:>9.3} {:>9.3} {:>9.3}\n",
            r.strategy,
            r.view_points,
            r.step.as_deref().unwrap_or("-"),
            r.map_50,
            r.ave_theta,
            r.ave_phi,
            r.ave_gamma
        ));
    }
    if !results.global.is_empty() {
        s.push('\n');
        s.push_str(&format!(
            "{:<8} {:>10} {:>14} {:>14} {:>14}\n",
            "Strategy", "Global mAP", "Global Ave-θ", "Global Ave-φ", "Global Ave-γ"
        ));
        for g in &results.global {
            s.push_str(&format!(
                "{:<8} {:>10.3} {:>14.3} {:>14.3} {:>14.3}\n",
                g.strategy, g.map_50, g.ave_theta, g.ave_phi, g.ave_gamma
            ));
        }
    }
    s.push_str(&format!("queries: {}\n", results.queries));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(strategy: &str, map_50: f64, ave_theta: f64) -> ResultRow {
        ResultRow {
            strategy: strategy.into(),
            view_points: 144,
            step: None,
            map_50,
            ave_theta,
            ave_phi: 1.0,
            ave_gamma: 0.0,
            n_images: 10,
            n_excluded: 0,
        }
    }

    #[test]
    fn global_map_is_mean_of_groups() {
        let rows = [r("Loop", 0.5, 10.0), r("Helix", 0.7, 1.0), r("Loop", 0.6, 20.0)];
        let g = global_rows(&rows);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].strategy, "Loop");
        assert!((g[0].map_50 - 0.55).abs() < 1e-15);
        assert_eq!(g[0].ave_theta, 15.0);
        assert_eq!(g[1].map_50, 0.7);
    }

    #[test]
    fn table_has_one_line_per_row_and_global_block() {
        let rows = vec![r("Loop", 0.5, 10.0), r("Helix", 0.7, 1.0)];
        let results = ResultsFile {
            version: 1,
            queries: 10,
            global: global_rows(&rows),
            rows,
        };
        let t = format_table(&results);
        assert_eq!(t.lines().filter(|l| l.starts_with("Loop")).count(), 2);
        assert!(t.contains("Global mAP"));
        assert!(t.lines().next().unwrap().contains("View Points"));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(CliError::Io(_))));
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        OutputLock::acquire(dir.path()).unwrap();
    }
}

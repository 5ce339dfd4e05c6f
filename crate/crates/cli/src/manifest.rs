//! On-disk dataset, composite and results documents.
//!
//! All documents are pretty-printed JSON with a trailing newline. Field order
//! follows the struct declarations and angles are written with six decimals,
//! so write -> read -> write reproduces the same bytes.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use watchforge_core::{Annotation, PixelBox, StrategyKind, Viewpoint};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPOSITE_FILE: &str = "composites.json";
pub const RESULTS_FILE: &str = "results.json";

/// Serializes as a JSON number with exactly six decimals.
pub mod fixed6 {
    use super::*;

    pub fn number(v: f64) -> serde_json::Number {
        let mut s = format!("{v:.6}");
        if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
            s.remove(0);
        }
        serde_json::Number::from_str(&s).expect("formatted float is a JSON number")
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if !v.is_finite() {
            return Err(serde::ser::Error::custom(format!("non-finite value {v}")));
        }
        number(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEcho {
    pub kind: StrategyKind,
    #[serde(with = "fixed6")]
    pub theta_step: f64,
    #[serde(with = "fixed6")]
    pub phi_step: f64,
    pub count: usize,
    #[serde(with = "fixed6")]
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub file: String,
    #[serde(with = "fixed6")]
    pub theta: f64,
    #[serde(with = "fixed6")]
    pub phi: f64,
    #[serde(with = "fixed6")]
    pub gamma: f64,
    pub bbox: Option<[u32; 4]>,
    pub valid: bool,
    pub kernel_used: Option<usize>,
}

impl ImageRecord {
    pub fn from_annotation(file: String, ann: &Annotation) -> Self {
        Self {
            file,
            theta: ann.viewpoint.theta(),
            phi: ann.viewpoint.phi(),
            gamma: ann.viewpoint.gamma(),
            bbox: ann.bbox.map(|b| b.to_array()),
            valid: ann.valid,
            kernel_used: ann.kernel_used,
        }
    }

    pub fn viewpoint(&self) -> CliResult<Viewpoint> {
        Viewpoint::new(self.theta, self.phi, self.gamma)
            .map_err(|e| CliError::Pipeline(format!("record {}: {e}", self.file)))
    }

    pub fn annotation(&self) -> CliResult<Annotation> {
        let bbox = self.bbox.map(box_from_array).transpose()?;
        Ok(Annotation {
            viewpoint: self.viewpoint()?,
            bbox,
            valid: self.valid,
            kernel_used: self.kernel_used,
        })
    }
}

fn box_from_array([x0, y0, x1, y1]: [u32; 4]) -> CliResult<PixelBox> {
    PixelBox::new(x0, y0, x1, y1).map_err(|e| CliError::Pipeline(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub strategy: StrategyEcho,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub occ_region: [u32; 4],
    pub records: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeRecord {
    pub file: String,
    pub background: String,
    pub bbox: [u32; 4],
}

/// Composite dataset: boxes only, no pose labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeManifest {
    pub version: u32,
    pub seed: u64,
    pub requested: usize,
    pub skipped: usize,
    pub records: Vec<CompositeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub strategy: String,
    pub view_points: usize,
    pub step: Option<String>,
    #[serde(with = "fixed6")]
    pub map_50: f64,
    #[serde(with = "fixed6")]
    pub ave_theta: f64,
    #[serde(with = "fixed6")]
    pub ave_phi: f64,
    #[serde(with = "fixed6")]
    pub ave_gamma: f64,
    pub n_images: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalRow {
    pub strategy: String,
    #[serde(with = "fixed6")]
    pub map_50: f64,
    #[serde(with = "fixed6")]
    pub ave_theta: f64,
    #[serde(with = "fixed6")]
    pub ave_phi: f64,
    #[serde(with = "fixed6")]
    pub ave_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub version: u32,
    pub queries: usize,
    pub rows: Vec<ResultRow>,
    pub global: Vec<GlobalRow>,
}

pub fn to_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &Path) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Pipeline(format!("{}: {e}", what.display())))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

impl DatasetManifest {
    pub fn check(&self, path: &Path) -> CliResult<()> {
        let bad = |m: String| CliError::Pipeline(format!("{}: {m}", path.display()));
        if self.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        for r in &self.records {
            if r.bbox.is_none() == r.valid {
                return Err(bad(format!("record {}: bbox must be null exactly when invalid", r.file)));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let m: Self = from_json(&read_text(path)?, path)?;
        m.check(path)?;
        Ok(m)
    }
}

/// A watch dataset loaded from disk.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub images: Vec<RgbImage>,
}

impl Dataset {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
        let images = manifest
            .records
            .iter()
            .map(|r| {
                let p = dir.join(&r.file);
                if !p.is_file() {
                    return Err(CliError::Pipeline(format!(
                        "{}: manifest references missing image {}",
                        dir.display(),
                        r.file
                    )));
                }
                let img = image::open(&p).map_err(|e| CliError::io(&p, e))?.into_rgb8();
                if img.dimensions() != (manifest.width, manifest.height) {
                    return Err(CliError::Pipeline(format!(
                        "{}: image is {:?}, manifest says {}x{}",
                        p.display(),
                        img.dimensions(),
                        manifest.width,
                        manifest.height
                    )));
                }
                Ok(img)
            })
            .collect::<CliResult<_>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            images,
        })
    }

    pub fn annotations(&self) -> CliResult<Vec<Annotation>> {
        self.manifest.records.iter().map(ImageRecord::annotation).collect()
    }
}

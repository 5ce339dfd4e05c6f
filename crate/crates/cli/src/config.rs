//! Run configuration: a `key = value` file with `#` comments, then flag overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use watchforge_core::augment::AugmentSpec;
use watchforge_core::scene::{BakeConfig, Interpolation};
use watchforge_core::{LabelGenConfig, RenderConfig, StrategyKind, StrategySpec};

use crate::error::{CliError, CliResult};

/// One `(theta_step, phi_step)` parameter group of a strategy comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group {
    pub theta_step: f64,
    pub phi_step: f64,
}

impl FromStr for Group {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let (t, p) = s
            .split_once('x')
            .ok_or_else(|| CliError::Config(format!("group '{s}' is not THETAxPHI")))?;
        Ok(Group {
            theta_step: parse_num("compare_groups", t)?,
            phi_step: parse_num("compare_groups", p)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Source watch dataset for `compose`.
    pub dataset_dir: Option<PathBuf>,
    pub backgrounds_dir: Option<PathBuf>,
    pub strategy: StrategySpec,
    pub bake: BakeConfig,
    pub render: RenderConfig,
    pub labelgen: LabelGenConfig,
    pub augment: AugmentSpec,
    pub seed: u64,
    /// Composite count for `compose`.
    pub n: usize,
    pub compare_groups: Vec<Group>,
    pub compare_queries: usize,
    /// Seed of the shared random query set; defaults to `seed + 1`.
    pub query_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene_path: None,
            output_dir: None,
            dataset_dir: None,
            backgrounds_dir: None,
            strategy: StrategySpec {
                kind: StrategyKind::Loop,
                theta_step: 10.0,
                phi_step: 30.0,
                count: 144,
                gamma: 4.0,
                seed: 0,
            },
            bake: BakeConfig::default(),
            render: RenderConfig::default(),
            labelgen: LabelGenConfig::default(),
            augment: AugmentSpec::default(),
            seed: 0,
            n: 100,
            compare_groups: vec![Group {
                theta_step: 10.0,
                phi_step: 30.0,
            }],
            compare_queries: 200,
            query_seed: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("bad value '{v}' for {key}"))),
    }
}

fn parse_triple(key: &str, v: &str) -> CliResult<[f64; 3]> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|p| parse_num(key, p))
        .collect::<CliResult<_>>()?;
    parts
        .try_into()
        .map_err(|_| CliError::Config(format!("{key} needs three comma-separated values")))
}

impl RunConfig {
    /// Applies one `key = value` setting. Paths are taken relative to `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> CliResult<()> {
        let v = value.trim();
        let path = || base.join(v);
        match key {
            "scene" | "scene_path" => self.scene_path = Some(path()),
            "out" | "output_dir" => self.output_dir = Some(path()),
            "dataset" | "dataset_dir" => self.dataset_dir = Some(path()),
            "backgrounds" | "backgrounds_dir" => self.backgrounds_dir = Some(path()),
            "strategy" => self.strategy.kind = v.parse().map_err(|e: watchforge_core::Error| CliError::Config(e.to_string()))?,
            "theta_step" => self.strategy.theta_step = parse_num(key, v)?,
            "phi_step" => self.strategy.phi_step = parse_num(key, v)?,
            "count" => self.strategy.count = parse_num(key, v)?,
            "gamma" => self.strategy.gamma = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "coarse_res" => self.bake.coarse_res = parse_num(key, v)?,
            "fine_res" => self.bake.fine_res = parse_num(key, v)?,
            "bounds" => self.bake.bounds = parse_num(key, v)?,
            "interpolation" => {
                self.bake.interpolation = match v {
                    "nearest" => Interpolation::Nearest,
                    "trilinear" => Interpolation::Trilinear,
                    _ => return Err(CliError::Config(format!("bad value '{v}' for {key}"))),
                }
            }
            "samples_per_unit" => self.render.samples_per_unit = parse_num(key, v)?,
            "background" => self.render.background = parse_triple(key, v)?,
            "width" => self.render.width = parse_num(key, v)?,
            "height" => self.render.height = parse_num(key, v)?,
            "focal" => self.render.focal = parse_num(key, v)?,
            "t_occ_factor" => self.labelgen.t_occ_factor = parse_num(key, v)?,
            "t_single_factor" => self.labelgen.t_single_factor = parse_num(key, v)?,
            "t_rect" => self.labelgen.t_rect = parse_num(key, v)?,
            "kernel_start" => self.labelgen.kernel_start = parse_num(key, v)?,
            "kernel_step" => self.labelgen.kernel_step = parse_num(key, v)?,
            "kernel_max" => self.labelgen.kernel_max = parse_num(key, v)?,
            "shift_range" => self.augment.shift_range = parse_num(key, v)?,
            "scale_min" => self.augment.scale_range[0] = parse_num(key, v)?,
            "scale_max" => self.augment.scale_range[1] = parse_num(key, v)?,
            "background_color_random" => self.augment.background_color_random = parse_bool(key, v)?,
            "object_threshold_factor" => self.augment.object_threshold_factor = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "compare_groups" => {
                self.compare_groups = v
                    .split(',')
                    .map(|g| g.trim().parse())
                    .collect::<CliResult<_>>()?
            }
            "compare_queries" => self.compare_queries = parse_num(key, v)?,
            "query_seed" => self.query_seed = Some(parse_num(key, v)?),
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value", no + 1))
            })?;
            cfg.set(k.trim(), v, base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Strategy with the run seed folded in.
    pub fn strategy_spec(&self) -> StrategySpec {
        StrategySpec {
            seed: self.seed,
            ..self.strategy
        }
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        AugmentSpec {
            seed: self.seed,
            ..self.augment
        }
    }

    pub fn query_seed(&self) -> u64 {
        self.query_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.strategy_spec().validate()?;
        self.render.validate()?;
        self.labelgen.validate()?;
        self.augment_spec().validate()?;
        if self.bake.coarse_res < 2 || self.bake.fine_res < 2 {
            return Err(CliError::Config("coarse_res and fine_res must be >= 2".into()));
        }
        if !(self.bake.bounds.is_finite() && self.bake.bounds > 0.0) {
            return Err(CliError::Config(format!("bounds {} must be > 0", self.bake.bounds)));
        }
        Ok(())
    }

    pub fn require_scene(&self) -> CliResult<&Path> {
        self.scene_path
            .as_deref()
            .ok_or_else(|| CliError::Config("no scene given (--scene or scene =)".into()))
    }

    pub fn require_output(&self) -> CliResult<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory given (--out or output_dir =)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let text = "# run\nscene = loco.json\nstrategy = helix # inline\ntheta_step=5\n\nseed = 9\nbackground = 1, 1, 0.5\ncompare_groups = 10x30, 5x30\n";
        let cfg = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.scene_path.as_deref(), Some(Path::new("/base/loco.json")));
        assert_eq!(cfg.strategy.kind, StrategyKind::Helix);
        assert_eq!(cfg.strategy.theta_step, 5.0);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.render.background, [1.0, 1.0, 0.5]);
        assert_eq!(cfg.compare_groups.len(), 2);
        assert_eq!(cfg.compare_groups[1], Group { theta_step: 5.0, phi_step: 30.0 });
        assert_eq!(cfg.query_seed(), 10);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let base = Path::new(".");
        assert!(matches!(RunConfig::parse("colour = red", base), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("seed", base), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("seed = -3", base), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("strategy = spiral", base), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("compare_groups = 10-30", base), Err(CliError::Config(_))));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.strategy.theta_step = 7.0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.render.samples_per_unit = 2.0;
        assert!(cfg.validate().is_err());
    }
}

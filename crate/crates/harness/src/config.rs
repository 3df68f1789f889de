//! Run configuration: a sectioned `key = value` file plus `section.key=value`
//! overrides. Every key has a default; unknown sections and keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ini::Ini;
use mace_core::consensus::{MaceConfig, Mode, Schedule};
use mace_core::denoise::DenoiserSpec;
use mace_core::geometry::Geometry;
use mace_core::models::{PriorKind, PriorParams, WeightModel, DEFAULT_RIDGE};
use mace_core::phantom::{PhantomKind, PHANTOM_MAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Centralized,
    Mace,
    Pnp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryConfig {
    pub n_side: usize,
    pub pixel_pitch: f64,
    pub n_views: usize,
    pub n_channels: usize,
    pub channel_pitch: f64,
    /// Count equits over the inscribed circle instead of the full square.
    pub circular_roi: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub qggmrf: bool,
    pub beta: f64,
    /// Defaults to 2% of the phantom's dynamic range.
    pub sigma_x: Option<f64>,
    pub p: f64,
    pub q: f64,
    pub t: f64,
    pub ridge: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaceSection {
    pub mode: RunMode,
    pub n_subsets: usize,
    pub rho: f64,
    /// Defaults to 10% of the phantom's dynamic range.
    pub sigma: Option<f64>,
    pub max_outer: usize,
    pub tol: f64,
    pub track_equits: bool,
    pub workers: usize,
    pub schedule: Schedule,
    pub residual_every: usize,
    pub clamp_nonnegative: bool,
    pub denoiser: String,
    pub denoiser_strength: f64,
    pub denoiser_radius: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub phantom: String,
    pub seed: u64,
    pub counts_scale: f64,
    pub weight_model: WeightModel,
    pub disk_radius: Option<f64>,
    pub phantom_value: f64,
    pub checker_cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    /// Measured data to reconstruct from instead of simulating.
    pub sinogram: Option<PathBuf>,
    /// System matrix cache; built and written when missing.
    pub matrix_cache: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub rho_values: Vec<f64>,
    pub n_values: Vec<usize>,
    /// Empty: the run's own sigma.
    pub sigma_values: Vec<f64>,
    pub target_nrmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub prior: PriorConfig,
    pub mace: MaceSection,
    pub sim: SimConfig,
    pub io: IoConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometryConfig {
                n_side: 32,
                pixel_pitch: 1.0,
                n_views: 64,
                n_channels: 96,
                channel_pitch: 0.5,
                circular_roi: false,
            },
            prior: PriorConfig {
                qggmrf: false,
                beta: 1e4,
                sigma_x: None,
                p: 2.0,
                q: 1.2,
                t: 1.0,
                ridge: DEFAULT_RIDGE,
            },
            mace: MaceSection {
                mode: RunMode::Mace,
                n_subsets: 4,
                rho: 0.8,
                sigma: None,
                max_outer: 2000,
                tol: 1e-7,
                track_equits: true,
                workers: 4,
                schedule: Schedule::RoundRobin,
                residual_every: 0,
                clamp_nonnegative: false,
                denoiser: "quadratic-prox".into(),
                denoiser_strength: 1e-3,
                denoiser_radius: 1,
            },
            sim: SimConfig {
                phantom: "ellipses".into(),
                seed: 1,
                counts_scale: 1e4,
                weight_model: WeightModel::Transmission,
                disk_radius: None,
                phantom_value: PHANTOM_MAX,
                checker_cells: 8,
            },
            io: IoConfig {
                output_dir: PathBuf::from("out"),
                sinogram: None,
                matrix_cache: None,
            },
            experiment: ExperimentConfig {
                rho_values: vec![0.5, 0.8],
                n_values: vec![1, 2, 4, 8],
                sigma_values: Vec::new(),
                target_nrmse: 1e-4,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {value:?}"),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match value.trim() {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).context("malformed configuration")?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    bail!("key {key:?} outside any section");
                };
                cfg.set(section, key, value)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_ini_str(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies `section.key=value`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override {assignment:?} is not section.key=value"))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| anyhow!("override {assignment:?} is not section.key=value"))?;
        self.set(section.trim(), key.trim(), value)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match (section, key) {
            ("geometry", "n_side") => self.geometry.n_side = parse(k, value)?,
            ("geometry", "pixel_pitch") => self.geometry.pixel_pitch = parse(k, value)?,
            ("geometry", "n_views") => self.geometry.n_views = parse(k, value)?,
            ("geometry", "n_channels") => self.geometry.n_channels = parse(k, value)?,
            ("geometry", "channel_pitch") => self.geometry.channel_pitch = parse(k, value)?,
            ("geometry", "roi") => {
                self.geometry.circular_roi = match value.trim() {
                    "full" => false,
                    "circle" => true,
                    v => bail!("{k}: expected full or circle, got {v:?}"),
                }
            }

            ("prior", "kind") => {
                self.prior.qggmrf = match value.trim() {
                    "quadratic" => false,
                    "qggmrf" => true,
                    v => bail!("{k}: expected quadratic or qggmrf, got {v:?}"),
                }
            }
            ("prior", "beta") => self.prior.beta = parse(k, value)?,
            ("prior", "sigma_x") => self.prior.sigma_x = optional(k, value)?,
            ("prior", "p") => self.prior.p = parse(k, value)?,
            ("prior", "q") => self.prior.q = parse(k, value)?,
            ("prior", "t") => self.prior.t = parse(k, value)?,
            ("prior", "ridge") => self.prior.ridge = parse(k, value)?,

            ("mace", "mode") => {
                self.mace.mode = match value.trim() {
                    "centralized" => RunMode::Centralized,
                    "mace" => RunMode::Mace,
                    "pnp" => RunMode::Pnp,
                    v => bail!("{k}: expected centralized, mace or pnp, got {v:?}"),
                }
            }
            ("mace", "n_subsets") => self.mace.n_subsets = parse(k, value)?,
            ("mace", "rho") => self.mace.rho = parse(k, value)?,
            ("mace", "sigma") => self.mace.sigma = optional(k, value)?,
            ("mace", "max_outer") => self.mace.max_outer = parse(k, value)?,
            ("mace", "tol") => self.mace.tol = parse(k, value)?,
            ("mace", "track_equits") => self.mace.track_equits = parse_bool(k, value)?,
            ("mace", "workers") => self.mace.workers = parse(k, value)?,
            ("mace", "schedule") => {
                self.mace.schedule = match value.trim() {
                    "round-robin" => Schedule::RoundRobin,
                    "blocked" => Schedule::Blocked,
                    "reversed" => Schedule::Reversed,
                    v => bail!("{k}: expected round-robin, blocked or reversed, got {v:?}"),
                }
            }
            ("mace", "residual_every") => self.mace.residual_every = parse(k, value)?,
            ("mace", "clamp_nonnegative") => self.mace.clamp_nonnegative = parse_bool(k, value)?,
            ("mace", "denoiser") => self.mace.denoiser = value.trim().to_string(),
            ("mace", "denoiser_strength") => self.mace.denoiser_strength = parse(k, value)?,
            ("mace", "denoiser_radius") => self.mace.denoiser_radius = parse(k, value)?,

            ("sim", "phantom") => self.sim.phantom = value.trim().to_string(),
            ("sim", "seed") => self.sim.seed = parse(k, value)?,
            ("sim", "counts_scale") => {
                self.sim.counts_scale = match value.trim() {
                    "inf" | "infinity" | "off" => f64::INFINITY,
                    v => parse(k, v)?,
                }
            }
            ("sim", "weight_model") => {
                self.sim.weight_model = match value.trim() {
                    "identity" => WeightModel::Identity,
                    "transmission" => WeightModel::Transmission,
                    v => bail!("{k}: expected identity or transmission, got {v:?}"),
                }
            }
            ("sim", "disk_radius") => self.sim.disk_radius = optional(k, value)?,
            ("sim", "phantom_value") => self.sim.phantom_value = parse(k, value)?,
            ("sim", "checker_cells") => self.sim.checker_cells = parse(k, value)?,

            ("io", "output_dir") => self.io.output_dir = PathBuf::from(value.trim()),
            ("io", "sinogram") => self.io.sinogram = non_empty_path(value),
            ("io", "matrix_cache") => self.io.matrix_cache = non_empty_path(value),

            ("experiment", "rho_values") => self.experiment.rho_values = parse_list(k, value)?,
            ("experiment", "n_values") => self.experiment.n_values = parse_list(k, value)?,
            ("experiment", "sigma_values") => self.experiment.sigma_values = parse_list(k, value)?,
            ("experiment", "target_nrmse") => self.experiment.target_nrmse = parse(k, value)?,

            ("geometry" | "prior" | "mace" | "sim" | "io" | "experiment", _) => bail!("unknown key {k}"),
            _ => bail!("unknown section [{section}]"),
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = &self.geometry;
        Ok(Geometry::new(g.n_side, g.pixel_pitch, g.n_views, g.n_channels, g.channel_pitch)?)
    }

    pub fn phantom_kind(&self) -> Result<PhantomKind> {
        let kind: PhantomKind = self.sim.phantom.parse()?;
        Ok(match kind {
            PhantomKind::UniformDisk { .. } => PhantomKind::UniformDisk {
                radius: self.sim.disk_radius.unwrap_or(f64::NAN),
                value: self.sim.phantom_value,
            },
            PhantomKind::Checker { .. } => PhantomKind::Checker {
                cells: self.sim.checker_cells,
                value: self.sim.phantom_value,
            },
            other => other,
        })
    }

    /// Prior with `sigma_x` resolved against the phantom's dynamic range.
    pub fn prior_params(&self, dynamic_range: f64) -> Result<PriorParams> {
        let p = &self.prior;
        let kind = if p.qggmrf {
            PriorKind::Qggmrf {
                p: p.p,
                q: p.q,
                t: p.t,
                sigma_x: p.sigma_x.unwrap_or(0.02 * dynamic_range),
            }
        } else {
            PriorKind::QuadraticMrf
        };
        let params = PriorParams {
            kind,
            beta: p.beta,
            ridge: p.ridge,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn sigma(&self, dynamic_range: f64) -> f64 {
        self.mace.sigma.unwrap_or(0.1 * dynamic_range)
    }

    pub fn denoiser(&self) -> Result<DenoiserSpec> {
        let spec = match self.mace.denoiser.as_str() {
            "identity" => DenoiserSpec::Identity,
            "quadratic-prox" => DenoiserSpec::QuadraticProx {
                strength: self.mace.denoiser_strength,
            },
            "boxcar" => DenoiserSpec::Boxcar {
                radius: self.mace.denoiser_radius,
            },
            v => bail!("mace.denoiser: expected identity, quadratic-prox or boxcar, got {v:?}"),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Consensus settings for `n_subsets` agents; centralized runs have none.
    pub fn mace_config(&self, sigma: f64, n_subsets: usize, rho: f64) -> Result<Option<MaceConfig>> {
        let mode = match self.mace.mode {
            RunMode::Centralized => return Ok(None),
            RunMode::Mace => Mode::Conventional { beta: self.prior.beta },
            RunMode::Pnp => Mode::Pnp {
                denoiser: self.denoiser()?,
            },
        };
        let m = &self.mace;
        let cfg = MaceConfig {
            n_subsets,
            rho,
            sigma,
            mode,
            max_outer: m.max_outer,
            tol: m.tol,
            track_equits: m.track_equits,
            workers: m.workers,
            schedule: m.schedule,
            residual_every: m.residual_every,
            clamp_nonnegative: m.clamp_nonnegative,
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }

    /// Checks everything that does not need the phantom.
    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        self.phantom_kind()?;
        if self.mace.mode == RunMode::Pnp {
            self.denoiser()?;
        }
        if !(self.sim.counts_scale > 0.0) {
            bail!("sim.counts_scale must be positive");
        }
        if self.mace.mode != RunMode::Centralized && self.mace.n_subsets > self.geometry.n_views {
            bail!("mace.n_subsets exceeds geometry.n_views");
        }
        if !(self.experiment.target_nrmse > 0.0) {
            bail!("experiment.target_nrmse must be positive");
        }
        self.prior_params(PHANTOM_MAX)?;
        Ok(())
    }
}

fn non_empty_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

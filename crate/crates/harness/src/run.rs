//! Experiment driver: builds a problem from a configuration and runs
//! reconstructions, sweeps and diagnostics, writing their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mace_core::consensus::{self, ConvergenceLog, LogRecord, MaceConfig, Mode, RunOptions, StackedState};
use mace_core::denoise::DenoiserSpec;
use mace_core::error::Error;
use mace_core::geometry::{self, partition_views, Geometry, SparseViewMatrix};
use mace_core::icd::AgentWorkspace;
use mace_core::image::{Image, SinogramSet};
use mace_core::metrics::{nrmse, speedup};
use mace_core::models::{prior_gradient, Problem};
use mace_core::oracle::{self, IterationMatrixReport};
use mace_core::phantom::make_phantom;
use mace_core::sim::simulate_sinogram;
use mace_core::{io, metrics};

use crate::config::{RunConfig, RunMode};

/// Relative change below which the reference ICD run stops.
pub const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_MAX_PASSES: usize = 100_000;

pub struct Prepared {
    pub geometry: Geometry,
    pub phantom: Image,
    pub problem: Problem,
    /// Proximal parameter after defaulting.
    pub sigma: f64,
}

fn load_or_build_matrices(cfg: &RunConfig, geom: &Geometry) -> Result<Vec<SparseViewMatrix>> {
    let Some(path) = &cfg.io.matrix_cache else {
        return Ok(geometry::build_system_matrix(geom)?);
    };
    if path.exists() {
        let (m, n) = geometry::load_matrix_cache(path).with_context(|| format!("reading {}", path.display()))?;
        if n != geom.n_pixels() || m.len() != geom.n_views || m.iter().any(|v| v.rows.len() != geom.n_channels) {
            bail!("matrix cache {} does not match the configured geometry", path.display());
        }
        return Ok(m);
    }
    let m = geometry::build_system_matrix(geom)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    geometry::save_matrix_cache(path, &m, geom.n_pixels())?;
    Ok(m)
}

fn simulate(cfg: &RunConfig, phantom: &Image, matrices: &[SparseViewMatrix]) -> Result<SinogramSet> {
    let s = &cfg.sim;
    Ok(simulate_sinogram(&phantom.data, matrices, s.seed, s.counts_scale, s.weight_model)?)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let matrices = load_or_build_matrices(cfg, &geometry)?;
    let phantom = make_phantom(cfg.phantom_kind()?, &geometry)?;
    let data = match &cfg.io.sinogram {
        Some(path) => io::load_sinogram(path).with_context(|| format!("reading {}", path.display()))?,
        None => simulate(cfg, &phantom, &matrices)?,
    };
    let range = phantom.dynamic_range();
    let prior = cfg.prior_params(range)?;
    let mut problem = Problem::new(geometry.n_side, matrices, data, prior)?;
    if cfg.geometry.circular_roi {
        problem = problem.with_roi(geometry.circular_roi())?;
    }
    let sigma = cfg.sigma(range);
    Ok(Prepared {
        geometry,
        phantom,
        problem,
        sigma,
    })
}

/// Simulated measurements for the configured phantom.
pub fn project(cfg: &RunConfig) -> Result<SinogramSet> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let matrices = load_or_build_matrices(cfg, &geometry)?;
    let phantom = make_phantom(cfg.phantom_kind()?, &geometry)?;
    simulate(cfg, &phantom, &matrices)
}

/// Centralized ICD with one log record per pass.
pub struct CentralizedRun {
    pub image: Vec<f64>,
    pub log: ConvergenceLog,
    pub equits: f64,
    pub converged: bool,
}

pub fn centralized_icd(
    problem: &Problem,
    beta: f64,
    tol: f64,
    max_passes: usize,
    clamp_nonnegative: bool,
    reference: Option<&[f64]>,
    stop_at_nrmse: Option<f64>,
) -> Result<CentralizedRun> {
    let start = Instant::now();
    let mut ws = AgentWorkspace::centralized(problem, beta)?;
    ws.set_clamp_nonnegative(clamp_nonnegative);
    let unused = vec![0.0; problem.n_pixels()];
    let roi = problem.roi_count() as f64;
    let mut log = ConvergenceLog::default();
    let mut converged = false;
    for pass in 1..=max_passes {
        let before = ws.state().to_vec();
        let x = ws.partial_update_prox(&unused)?;
        let change = metrics::norm(&x.iter().zip(&before).map(|(a, b)| a - b).collect::<Vec<_>>());
        let size = metrics::norm(x);
        let rel = if change == 0.0 { 0.0 } else { change / size };
        let err = match reference {
            Some(r) => nrmse(x, r)?,
            None => f64::NAN,
        };
        log.records.push(LogRecord {
            iter: pass,
            equits: ws.roi_updates() as f64 / roi,
            mann_update_relnorm: rel,
            r_f: f64::NAN,
            r_balance: f64::NAN,
            nrmse_vs_ref: err,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if !rel.is_finite() {
            break;
        }
        if rel < tol || stop_at_nrmse.is_some_and(|t| err < t) {
            converged = true;
            break;
        }
    }
    Ok(CentralizedRun {
        image: ws.state().to_vec(),
        log,
        equits: ws.roi_updates() as f64 / roi,
        converged,
    })
}

/// The fixed point a run with this configuration should reach: the MAP
/// estimate, or the plug-and-play equilibrium. Dense solves when small,
/// otherwise a long ICD or serial run. `None` when no reference is affordable.
pub fn reference_image(cfg: &RunConfig, prepared: &Prepared) -> Result<Option<Vec<f64>>> {
    let problem = &prepared.problem;
    let small = problem.n_pixels() <= oracle::DENSE_PIXEL_LIMIT;
    let beta = cfg.prior.beta;
    match cfg.mace.mode {
        RunMode::Centralized | RunMode::Mace => {
            if small && problem.prior.is_quadratic() {
                return Ok(Some(oracle::dense_map_oracle(problem, beta)?));
            }
            let run = centralized_icd(problem, beta, REFERENCE_TOL, REFERENCE_MAX_PASSES, false, None, None)?;
            if !run.converged {
                bail!("reference ICD did not reach {REFERENCE_TOL:e}");
            }
            Ok(Some(run.image))
        }
        RunMode::Pnp => {
            if !small {
                return Ok(None);
            }
            let spec = cfg.denoiser()?;
            if let DenoiserSpec::QuadraticProx { strength } = spec {
                return Ok(Some(oracle::dense_composite_oracle(problem, strength, prepared.sigma)?));
            }
            let h = spec.build(problem.side)?;
            Ok(Some(oracle::serial_pnp_oracle(problem, h.as_ref(), prepared.sigma, REFERENCE_TOL)?))
        }
    }
}

#[derive(Clone, Debug)]
pub struct MemoryReport {
    pub n_subsets: usize,
    pub total_nnz: usize,
    pub max_view_nnz: usize,
    pub nnz_per_agent: Vec<usize>,
    pub bytes_per_agent: Vec<usize>,
}

impl MemoryReport {
    /// `total / N + max view nnz`.
    pub fn bound(&self) -> f64 {
        self.total_nnz as f64 / self.n_subsets as f64 + self.max_view_nnz as f64
    }

    pub fn within_bound(&self) -> bool {
        self.nnz_per_agent.iter().all(|&k| k as f64 <= self.bound())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "N = {}\ntotal nnz = {}\nmax view nnz = {}\nbound total/N + max view = {:.1}\n",
            self.n_subsets,
            self.total_nnz,
            self.max_view_nnz,
            self.bound()
        );
        out.push_str("agent,nnz,bytes\n");
        for (i, (k, b)) in self.nnz_per_agent.iter().zip(&self.bytes_per_agent).enumerate() {
            let _ = writeln!(out, "{i},{k},{b}");
        }
        let _ = writeln!(out, "within bound = {}", self.within_bound());
        out
    }
}

/// System-matrix share of each agent under the interleaved view split, with
/// a byte estimate of its workspace: column-compressed matrix (u32 row, f64
/// value), column offsets, per-row data, weights and error, and per-pixel
/// state and curvature.
pub fn memory_report(problem: &Problem, n_subsets: usize) -> Result<MemoryReport> {
    let subsets = partition_views(problem.n_views(), n_subsets)?;
    let view_nnz: Vec<usize> = problem.matrices.iter().map(|m| m.nnz()).collect();
    let n = problem.n_pixels();
    let channels = problem.data.n_channels();
    let mut nnz_per_agent = Vec::with_capacity(n_subsets);
    let mut bytes_per_agent = Vec::with_capacity(n_subsets);
    for s in &subsets {
        let nnz: usize = s.view_indices.iter().map(|&k| view_nnz[k]).sum();
        let rows = s.view_indices.len() * channels;
        nnz_per_agent.push(nnz);
        bytes_per_agent.push(nnz * 12 + (n + 1) * 8 + rows * 24 + n * 16);
    }
    Ok(MemoryReport {
        n_subsets,
        total_nnz: view_nnz.iter().sum(),
        max_view_nnz: view_nnz.iter().copied().max().unwrap_or(0),
        nnz_per_agent,
        bytes_per_agent,
    })
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub image: Vec<f64>,
    pub iterations: usize,
    pub equits: f64,
    pub sigma: f64,
    pub final_nrmse: Option<f64>,
    pub output_dir: PathBuf,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs the configured reconstruction and writes `reconstruction.img`,
/// `preview.pgm`, `convergence.csv`, `residuals.txt`, `memory.txt` and
/// `summary.txt` into the output directory. A failed consensus run still
/// leaves its log and last iterate behind.
pub fn reconstruct(cfg: &RunConfig) -> Result<RunSummary> {
    let prepared = prepare(cfg)?;
    let problem = &prepared.problem;
    let dir = cfg.io.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let reference = reference_image(cfg, &prepared)?;
    let save_image = |x: &[f64]| -> Result<()> {
        let img = Image::from_vec(problem.side, x.to_vec())?;
        io::save_image(&dir.join("reconstruction.img"), &img)?;
        io::save_pgm(&dir.join("preview.pgm"), &img)?;
        Ok(())
    };

    let (image, log, equits, residual_text, n_subsets) = match cfg.mace_config(prepared.sigma, cfg.mace.n_subsets, cfg.mace.rho)? {
        None => {
            let run = centralized_icd(
                problem,
                cfg.prior.beta,
                cfg.mace.tol,
                cfg.mace.max_outer,
                cfg.mace.clamp_nonnegative,
                reference.as_deref(),
                None,
            )?;
            write(&dir, "convergence.csv", &run.log.to_csv())?;
            save_image(&run.image)?;
            if !run.converged {
                bail!("centralized ICD did not reach tolerance {:e} in {} passes", cfg.mace.tol, cfg.mace.max_outer);
            }
            let grad = problem.map_gradient(&run.image, cfg.prior.beta)?;
            let g0 = problem.map_gradient(&vec![0.0; problem.n_pixels()], cfg.prior.beta)?;
            let text = format!("relative gradient = {:e}\n", metrics::norm(&grad) / metrics::norm(&g0).max(f64::MIN_POSITIVE));
            (run.image, run.log, run.equits, text, 1)
        }
        Some(mc) => {
            let options = RunOptions {
                reference: reference.clone(),
                ..RunOptions::default()
            };
            match consensus::solve(problem, &mc, &options) {
                Ok(out) => {
                    write(&dir, "convergence.csv", &out.log.to_csv())?;
                    save_image(&out.image)?;
                    (out.image, out.log, out.equits, out.residuals.to_text(), mc.n_subsets)
                }
                Err(Error::ConsensusNotConverged { log, last_iterate }) => {
                    write(&dir, "convergence.csv", &log.to_csv())?;
                    save_image(&last_iterate)?;
                    bail!(
                        "consensus did not converge after {} iterations (last relative update {:e}); \
                         a smaller mace.sigma usually helps",
                        log.records.len(),
                        log.last().map_or(f64::NAN, |r| r.mann_update_relnorm)
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    write(&dir, "residuals.txt", &residual_text)?;
    write(&dir, "memory.txt", &memory_report(problem, n_subsets)?.to_text())?;

    let final_nrmse = reference.as_deref().map(|r| nrmse(&image, r)).transpose()?;
    let iterations = log.records.len();
    let mut summary = format!(
        "mode = {:?}\nN = {n_subsets}\nrho = {}\nsigma = {:e}\niterations = {iterations}\nequits = {equits}\n",
        cfg.mace.mode, cfg.mace.rho, prepared.sigma
    );
    if let Some(e) = final_nrmse {
        let _ = writeln!(summary, "nrmse vs reference = {e:e}");
    }
    write(&dir, "summary.txt", &summary)?;
    Ok(RunSummary {
        image,
        iterations,
        equits,
        sigma: prepared.sigma,
        final_nrmse,
        output_dir: dir,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepStatus {
    Reached,
    /// Stopped at the iteration cap before reaching the target.
    NotReached,
    Diverged,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub sigma: f64,
    pub n_subsets: usize,
    pub rho: f64,
    pub status: SweepStatus,
    pub iterations: usize,
    pub equits_to_target: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub target_nrmse: f64,
    pub central_equits: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,n_subsets,rho,status,iterations,equits_to_target,speedup\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:e},{},{},{:?},{},{},{}",
                r.sigma,
                r.n_subsets,
                r.rho,
                r.status,
                r.iterations,
                opt(r.equits_to_target),
                opt(r.speedup)
            );
        }
        out
    }

    /// One block per sigma: rows are rho, columns N, entries equits to target.
    pub fn to_text(&self) -> String {
        let mut out = format!("equits to NRMSE {:e}", self.target_nrmse);
        match self.central_equits {
            Some(e) => {
                let _ = writeln!(out, " (centralized ICD: {e})");
            }
            None => out.push('\n'),
        }
        let mut sigmas: Vec<f64> = Vec::new();
        let mut ns: Vec<usize> = Vec::new();
        let mut rhos: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !sigmas.contains(&r.sigma) {
                sigmas.push(r.sigma);
            }
            if !ns.contains(&r.n_subsets) {
                ns.push(r.n_subsets);
            }
            if !rhos.contains(&r.rho) {
                rhos.push(r.rho);
            }
        }
        for &s in &sigmas {
            let _ = write!(out, "\nsigma = {s:e}\n{:>8}", "rho\\N");
            for n in &ns {
                let _ = write!(out, "{n:>12}");
            }
            out.push('\n');
            for &rho in &rhos {
                let _ = write!(out, "{rho:>8}");
                for &n in &ns {
                    let cell = self
                        .rows
                        .iter()
                        .find(|r| r.sigma == s && r.n_subsets == n && r.rho == rho)
                        .map_or("-".to_string(), |r| match (&r.status, r.equits_to_target) {
                            (SweepStatus::Diverged, _) => "diverged".into(),
                            (_, Some(e)) => format!("{e:.1}"),
                            _ => "n/r".into(),
                        });
                    let _ = write!(out, "{cell:>12}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Equits to `experiment.target_nrmse` over the configured grid of sigma,
/// N and rho. Needs a reference image.
pub fn sweep(cfg: &RunConfig) -> Result<SweepTable> {
    if cfg.mace.mode == RunMode::Centralized {
        bail!("sweep needs mace.mode = mace or pnp");
    }
    let prepared = prepare(cfg)?;
    let problem = &prepared.problem;
    let reference = reference_image(cfg, &prepared)?.context("no reference image affordable for this size")?;
    let target = cfg.experiment.target_nrmse;
    let central_equits = match cfg.mace.mode {
        RunMode::Mace => centralized_icd(
            problem,
            cfg.prior.beta,
            0.0,
            REFERENCE_MAX_PASSES,
            false,
            Some(&reference),
            Some(target),
        )?
        .log
        .equits_to_nrmse(target),
        _ => None,
    };
    let sigmas = if cfg.experiment.sigma_values.is_empty() {
        vec![prepared.sigma]
    } else {
        cfg.experiment.sigma_values.clone()
    };
    let mut rows = Vec::new();
    for &sigma in &sigmas {
        for &n in &cfg.experiment.n_values {
            for &rho in &cfg.experiment.rho_values {
                let mc = cfg.mace_config(sigma, n, rho)?.expect("consensus mode");
                let options = RunOptions {
                    reference: Some(reference.clone()),
                    stop_at_nrmse: Some(target),
                    ..RunOptions::default()
                };
                let (status, log) = match consensus::solve(problem, &mc, &options) {
                    Ok(out) => (SweepStatus::Reached, out.log),
                    Err(Error::ConsensusNotConverged { log, .. }) => {
                        let blown = log
                            .last()
                            .is_none_or(|r| !r.mann_update_relnorm.is_finite() || !(r.nrmse_vs_ref < 1.0));
                        let status = if blown { SweepStatus::Diverged } else { SweepStatus::NotReached };
                        (status, *log)
                    }
                    Err(e) => return Err(e.into()),
                };
                let equits_to_target = log.equits_to_nrmse(target);
                let status = match (status, equits_to_target) {
                    (SweepStatus::Reached, None) => SweepStatus::NotReached,
                    (s, _) => s,
                };
                let speedup = match (central_equits, equits_to_target) {
                    (Some(c), Some(m)) => Some(speedup(c, m, n)?),
                    _ => None,
                };
                rows.push(SweepRow {
                    sigma,
                    n_subsets: n,
                    rho,
                    status,
                    iterations: log.records.len(),
                    equits_to_target,
                    speedup,
                });
            }
        }
    }
    let table = SweepTable {
        target_nrmse: target,
        central_equits,
        rows,
    };
    let dir = &cfg.io.output_dir;
    fs::create_dir_all(dir)?;
    write(dir, "sweep.csv", &table.to_csv())?;
    write(dir, "sweep.txt", &table.to_text())?;
    Ok(table)
}

/// Exact and first-order iteration-matrix spectra for the configured
/// conventional run; writes `eigenvalues.csv` and `eigen_summary.txt`.
pub fn eigreport(cfg: &RunConfig) -> Result<IterationMatrixReport> {
    if cfg.mace.mode != RunMode::Mace {
        bail!("eigreport needs mace.mode = mace");
    }
    let prepared = prepare(cfg)?;
    let report = oracle::assemble_iteration_matrices(
        &prepared.problem,
        cfg.mace.n_subsets,
        prepared.sigma,
        cfg.mace.rho,
        cfg.prior.beta,
    )?;
    let dir = &cfg.io.output_dir;
    fs::create_dir_all(dir)?;
    write(dir, "eigenvalues.csv", &report.to_csv())?;
    write(dir, "eigen_summary.txt", &report.summary())?;
    Ok(report)
}

/// The consensus stack at which `x` would be an equilibrium of the
/// conventional run: `w_i = x - sigma^2 grad f_i(x)` with `f_i` the agent's
/// data term plus `beta / N` of the prior.
pub fn candidate_stack(problem: &Problem, config: &MaceConfig, x: &[f64]) -> Result<StackedState> {
    let Mode::Conventional { beta } = config.mode else {
        bail!("candidate stacks are defined for the conventional prior only");
    };
    let s2 = config.sigma * config.sigma;
    let prior = problem.prior.with_beta(beta / config.n_subsets as f64);
    let gp = prior_gradient(x, problem.side, &prior)?;
    let mut components = Vec::with_capacity(config.n_subsets);
    for subset in partition_views(problem.n_views(), config.n_subsets)? {
        let g = problem.likelihood_gradient(subset.view_indices, x)?;
        components.push(x.iter().zip(g.iter().zip(&gp)).map(|(xi, (a, b))| xi - s2 * (a + b)).collect());
    }
    Ok(StackedState::new(components)?)
}

/// Equilibrium residuals of a candidate image under the configured
/// conventional run.
pub fn residuals_for_image(cfg: &RunConfig, image: &Image) -> Result<consensus::ResidualReport> {
    let prepared = prepare(cfg)?;
    let Some(mc) = cfg.mace_config(prepared.sigma, cfg.mace.n_subsets, cfg.mace.rho)? else {
        bail!("residuals need mace.mode = mace");
    };
    if image.side != prepared.problem.side {
        bail!("image is {}x{}, geometry is {}x{}", image.side, image.side, prepared.problem.side, prepared.problem.side);
    }
    let w = candidate_stack(&prepared.problem, &mc, &image.data)?;
    Ok(consensus::equilibrium_residuals(&w, &prepared.problem, &mc)?)
}

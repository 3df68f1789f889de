//! Stacked-state algebra and the partial-update consensus loops.
//!
//! The outer iteration is
//!
//! ```text
//! v <- (2G - I) w
//! X <- F~(v; X)              one ICD pass per agent
//! w <- rho (2X - v) + (1 - rho) w
//! ```
//!
//! with `G` the averaging operator for conventional priors, or `G_H`, which
//! replicates `H(mean(v))`, when a denoiser stands in for the prior.
//! Agents run on a pool of worker threads; the coordinator scatters one
//! component of `v` to each agent, gathers `2X_i - v_i` back and reduces in
//! agent order, so the result does not depend on how agents are scheduled.

use std::fmt::Write as _;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use crate::denoise::{Denoiser, DenoiserSpec};
use crate::error::{check_len, Error, Result};
use crate::geometry::partition_views;
use crate::icd::AgentWorkspace;
use crate::metrics::{norm, nrmse};
use crate::models::Problem;

/// Tolerance of the converged proximal maps used for residuals.
pub const RESIDUAL_PROX_TOL: f64 = 1e-9;

/// A run is declared divergent once `|w|` exceeds this multiple of its
/// largest value over the first [`DIVERGENCE_WARMUP`] iterations.
pub const DIVERGENCE_FACTOR: f64 = 1e8;
pub const DIVERGENCE_WARMUP: usize = 10;

/// `N` images of `n` pixels each.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedState {
    pub components: Vec<Vec<f64>>,
}

impl StackedState {
    pub fn new(components: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidParameter("stack needs at least one component".into()));
        };
        let n = first.len();
        for c in &components {
            check_len(n, c.len(), "stack component")?;
        }
        Ok(StackedState { components })
    }

    pub fn replicate(x: &[f64], n_agents: usize) -> Self {
        StackedState {
            components: vec![x.to_vec(); n_agents.max(1)],
        }
    }

    pub fn zeros(n_agents: usize, n_pixels: usize) -> Self {
        Self::replicate(&vec![0.0; n_pixels], n_agents)
    }

    pub fn n_agents(&self) -> usize {
        self.components.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.components[0].len()
    }

    /// Component mean: the first component plus the mean offset of the
    /// others, summed in agent order. Exact when all components agree.
    pub fn average(&self) -> Vec<f64> {
        let first = &self.components[0];
        let mut offset = vec![0.0; first.len()];
        for c in &self.components[1..] {
            for ((o, x), f) in offset.iter_mut().zip(c).zip(first) {
                *o += x - f;
            }
        }
        let n_agents = self.n_agents() as f64;
        first.iter().zip(offset).map(|(f, o)| f + o / n_agents).collect()
    }

    pub fn consensus_g(&self) -> Self {
        Self::replicate(&self.average(), self.n_agents())
    }

    /// `2 G(v) - v`.
    pub fn reflect_g(&self) -> Self {
        self.reflect_about(&self.average())
    }

    /// Every component set to `H(mean(v))`.
    pub fn consensus_gh(&self, denoiser: &dyn Denoiser) -> Result<Self> {
        Ok(Self::replicate(&denoiser.denoise(&self.average())?, self.n_agents()))
    }

    /// `2 G_H(v) - v`.
    pub fn reflect_gh(&self, denoiser: &dyn Denoiser) -> Result<Self> {
        Ok(self.reflect_about(&denoiser.denoise(&self.average())?))
    }

    /// `2 center - v_i` for every component.
    pub fn reflect_about(&self, center: &[f64]) -> Self {
        StackedState {
            components: self
                .components
                .iter()
                .map(|c| center.iter().zip(c).map(|(m, x)| 2.0 * m - x).collect())
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.components
            .iter()
            .flatten()
            .zip(other.components.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        check_len(self.n_agents(), other.n_agents(), "stack components")?;
        check_len(self.n_pixels(), other.n_pixels(), "stack component length")
    }
}

/// `rho Tw + (1 - rho) w`.
pub fn mann_step(w: &StackedState, tw: &StackedState, rho: f64) -> Result<StackedState> {
    w.check_shape(tw)?;
    Ok(StackedState {
        components: w
            .components
            .iter()
            .zip(&tw.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, t)| x + rho * (t - x)).collect())
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Every agent carries `beta / N` of the prior.
    Conventional { beta: f64 },
    /// Agents carry data only, at proximal parameter `sqrt(N) sigma`; the
    /// denoiser is applied once per iteration to the mean.
    Pnp { denoiser: DenoiserSpec },
}

/// How agents are assigned to worker threads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    #[default]
    RoundRobin,
    Blocked,
    Reversed,
}

impl Schedule {
    fn worker_of(self, agent: usize, n_agents: usize, n_workers: usize) -> usize {
        match self {
            Schedule::RoundRobin => agent % n_workers,
            Schedule::Blocked => agent / n_agents.div_ceil(n_workers),
            Schedule::Reversed => (n_agents - 1 - agent) % n_workers,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaceConfig {
    pub n_subsets: usize,
    pub rho: f64,
    pub sigma: f64,
    pub mode: Mode,
    pub max_outer: usize,
    /// Stop once `|w_new - w| / |w|` falls below this.
    pub tol: f64,
    pub track_equits: bool,
    /// Worker threads; 0 or 1 runs every agent on the calling thread.
    pub workers: usize,
    pub schedule: Schedule,
    /// Equilibrium residuals every this many iterations (0: final only).
    pub residual_every: usize,
    pub clamp_nonnegative: bool,
}

impl MaceConfig {
    pub fn new(n_subsets: usize, sigma: f64, mode: Mode) -> Self {
        MaceConfig {
            n_subsets,
            rho: 0.8,
            sigma,
            mode,
            max_outer: 2000,
            tol: 1e-7,
            track_equits: true,
            workers: n_subsets,
            schedule: Schedule::RoundRobin,
            residual_every: 0,
            clamp_nonnegative: false,
        }
    }

    pub fn conventional(n_subsets: usize, sigma: f64, beta: f64) -> Self {
        Self::new(n_subsets, sigma, Mode::Conventional { beta })
    }

    pub fn pnp(n_subsets: usize, sigma: f64, denoiser: DenoiserSpec) -> Self {
        Self::new(n_subsets, sigma, Mode::Pnp { denoiser })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n_subsets == 0 {
            return Err(Error::InvalidParameter("need at least one subset".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be nonnegative".into()));
        }
        match self.mode {
            Mode::Conventional { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(Error::InvalidParameter("beta must be nonnegative".into()))
            }
            Mode::Pnp { denoiser } => denoiser.validate(),
            _ => Ok(()),
        }
    }

    /// Proximal parameter each agent actually uses.
    pub fn agent_sigma(&self) -> f64 {
        match self.mode {
            Mode::Conventional { .. } => self.sigma,
            Mode::Pnp { .. } => self.sigma * (self.n_subsets as f64).sqrt(),
        }
    }

    fn agent_beta(&self) -> f64 {
        match self.mode {
            Mode::Conventional { beta } => beta,
            Mode::Pnp { .. } => 0.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Image the log's NRMSE column is measured against.
    pub reference: Option<Vec<f64>>,
    /// Starting `w`; zero when absent. `X` starts at `G(w)`.
    pub initial_w: Option<StackedState>,
    /// Also stop, successfully, once NRMSE against the reference drops below this.
    pub stop_at_nrmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub equits: f64,
    pub mann_update_relnorm: f64,
    pub r_f: f64,
    /// `r_u` for conventional priors, `r_H` for plug-and-play.
    pub r_balance: f64,
    pub nrmse_vs_ref: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceLog {
    pub pnp: bool,
    pub records: Vec<LogRecord>,
}

impl ConvergenceLog {
    pub fn to_csv(&self) -> String {
        let balance = if self.pnp { "r_H" } else { "r_u" };
        let mut out = format!("iter,equits,mann_update_relnorm,r_F,{balance},nrmse_vs_ref,wall_seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:.6}",
                r.iter, r.equits, r.mann_update_relnorm, r.r_f, r.r_balance, r.nrmse_vs_ref, r.wall_seconds
            );
        }
        out
    }

    /// Equits at the first record whose NRMSE is below `target`.
    pub fn equits_to_nrmse(&self, target: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.nrmse_vs_ref < target)
            .map(|r| r.equits)
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub x_hat: Vec<f64>,
    /// `max_i |F_i(x + u_i) - x| / |x|`.
    pub r_f: f64,
    /// `|sum_i u_i| / |x|` (conventional) or `|N alpha + sum_i t_i| / |x|` (PnP).
    pub r_u: f64,
    /// `|H(x + alpha) - x| / |x|`, PnP only.
    pub r_h: Option<f64>,
}

impl ResidualReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("r_F = {:e}\nr_u = {:e}\n", self.r_f, self.r_u);
        if let Some(r_h) = self.r_h {
            let _ = writeln!(out, "r_H = {r_h:e}");
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct MaceOutcome {
    pub image: Vec<f64>,
    pub w: StackedState,
    /// Final agent states `X`.
    pub states: StackedState,
    pub log: ConvergenceLog,
    pub residuals: ResidualReport,
    /// System-matrix nonzeros held by each agent.
    pub nnz_per_agent: Vec<usize>,
    pub equits: f64,
}

struct Job {
    agent: usize,
    v: Vec<f64>,
}

struct Done {
    agent: usize,
    reflected: Vec<f64>,
    updates: u64,
}

fn agent_step(ws: &mut AgentWorkspace, v: &[f64]) -> Result<(Vec<f64>, u64)> {
    let x = ws.partial_update_prox(v)?;
    let reflected = x.iter().zip(v).map(|(a, b)| 2.0 * a - b).collect();
    Ok((reflected, ws.roi_updates()))
}

/// Agents either run inline or live on worker threads, one mailbox each.
enum Pool<'scope> {
    Inline(Vec<AgentWorkspace>),
    Threads {
        owner: Vec<usize>,
        jobs: Vec<mpsc::Sender<Job>>,
        done: mpsc::Receiver<Result<Done>>,
        handles: Vec<thread::ScopedJoinHandle<'scope, Vec<AgentWorkspace>>>,
    },
}

impl<'scope> Pool<'scope> {
    fn start<'env>(
        scope: &'scope thread::Scope<'scope, 'env>,
        agents: Vec<AgentWorkspace>,
        workers: usize,
        schedule: Schedule,
    ) -> Self {
        let n_agents = agents.len();
        let workers = workers.min(n_agents);
        if workers <= 1 {
            return Pool::Inline(agents);
        }
        let owner: Vec<usize> = (0..n_agents)
            .map(|i| schedule.worker_of(i, n_agents, workers))
            .collect();
        let mut buckets: Vec<Vec<AgentWorkspace>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, ws) in agents.into_iter().enumerate() {
            buckets[owner[i]].push(ws);
        }
        let (done_tx, done) = mpsc::channel();
        let mut jobs = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for mut mine in buckets {
            let (tx, rx) = mpsc::channel::<Job>();
            let done_tx = done_tx.clone();
            jobs.push(tx);
            handles.push(scope.spawn(move || {
                for job in rx {
                    let ws = mine
                        .iter_mut()
                        .find(|w| w.subset.subset_index == job.agent)
                        .expect("job routed to the owning worker");
                    let msg = agent_step(ws, &job.v).map(|(reflected, updates)| Done {
                        agent: job.agent,
                        reflected,
                        updates,
                    });
                    if done_tx.send(msg).is_err() {
                        break;
                    }
                }
                mine
            }));
        }
        Pool::Threads {
            owner,
            jobs,
            done,
            handles,
        }
    }

    /// Runs one partial update per agent; returns `2X - v` and the ROI
    /// update counters, indexed by agent.
    fn step(&mut self, v: &StackedState) -> Result<(StackedState, Vec<u64>)> {
        let n_agents = v.n_agents();
        let mut reflected = vec![Vec::new(); n_agents];
        let mut updates = vec![0; n_agents];
        match self {
            Pool::Inline(agents) => {
                for (i, ws) in agents.iter_mut().enumerate() {
                    (reflected[i], updates[i]) = agent_step(ws, &v.components[i])?;
                }
            }
            Pool::Threads { owner, jobs, done, .. } => {
                for (agent, comp) in v.components.iter().enumerate() {
                    jobs[owner[agent]]
                        .send(Job {
                            agent,
                            v: comp.clone(),
                        })
                        .expect("worker alive while the pool is");
                }
                for _ in 0..n_agents {
                    let d = done.recv().expect("worker alive while the pool is")?;
                    reflected[d.agent] = d.reflected;
                    updates[d.agent] = d.updates;
                }
            }
        }
        Ok((StackedState { components: reflected }, updates))
    }

    fn finish(self) -> Vec<AgentWorkspace> {
        match self {
            Pool::Inline(agents) => agents,
            Pool::Threads { jobs, handles, .. } => {
                drop(jobs);
                let mut all: Vec<AgentWorkspace> = handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("agent worker panicked"))
                    .collect();
                all.sort_by_key(|w| w.subset.subset_index);
                all
            }
        }
    }
}

fn build_agents(problem: &Problem, config: &MaceConfig) -> Result<Vec<AgentWorkspace>> {
    let sigma = config.agent_sigma();
    let beta = config.agent_beta();
    partition_views(problem.n_views(), config.n_subsets)?
        .into_iter()
        .map(|s| {
            let mut ws = AgentWorkspace::new(problem, s, config.n_subsets, sigma, beta)?;
            ws.set_clamp_nonnegative(config.clamp_nonnegative);
            Ok(ws)
        })
        .collect()
}

fn relative_change(new: &StackedState, old: &StackedState) -> f64 {
    let diff = new.distance(old);
    if diff == 0.0 {
        return 0.0;
    }
    let base = old.norm();
    diff / if base > 0.0 { base } else { new.norm() }
}

/// Partial-update MACE with the conventional prior split across agents.
/// Returns `x* = mean(w)`.
pub fn mace_solve(problem: &Problem, config: &MaceConfig, options: &RunOptions) -> Result<MaceOutcome> {
    if !matches!(config.mode, Mode::Conventional { .. }) {
        return Err(Error::InvalidParameter("mace_solve needs conventional mode".into()));
    }
    run(problem, config, options, None)
}

/// Partial-update MACE with a plug-and-play denoiser built from the config.
/// Returns `x* = H(mean(w))`.
pub fn mace_pnp_solve(problem: &Problem, config: &MaceConfig, options: &RunOptions) -> Result<MaceOutcome> {
    let Mode::Pnp { denoiser } = config.mode else {
        return Err(Error::InvalidParameter("mace_pnp_solve needs pnp mode".into()));
    };
    let h = denoiser.build(problem.side)?;
    run(problem, config, options, Some(h.as_ref()))
}

/// As [`mace_pnp_solve`] with any denoiser; `config.mode` only needs to be
/// plug-and-play.
pub fn mace_pnp_solve_with(
    problem: &Problem,
    config: &MaceConfig,
    denoiser: &dyn Denoiser,
    options: &RunOptions,
) -> Result<MaceOutcome> {
    if !matches!(config.mode, Mode::Pnp { .. }) {
        return Err(Error::InvalidParameter("mace_pnp_solve needs pnp mode".into()));
    }
    run(problem, config, options, Some(denoiser))
}

/// Dispatches on `config.mode`.
pub fn solve(problem: &Problem, config: &MaceConfig, options: &RunOptions) -> Result<MaceOutcome> {
    match config.mode {
        Mode::Conventional { .. } => mace_solve(problem, config, options),
        Mode::Pnp { .. } => mace_pnp_solve(problem, config, options),
    }
}

fn run(
    problem: &Problem,
    config: &MaceConfig,
    options: &RunOptions,
    denoiser: Option<&dyn Denoiser>,
) -> Result<MaceOutcome> {
    config.validate()?;
    let n = problem.n_pixels();
    let n_agents = config.n_subsets;
    if let Some(r) = &options.reference {
        check_len(n, r.len(), "reference image")?;
    }
    let mut w = match &options.initial_w {
        Some(w0) => {
            w0.check_shape(&StackedState::zeros(n_agents, n))?;
            w0.clone()
        }
        None => StackedState::zeros(n_agents, n),
    };

    let mut agents = build_agents(problem, config)?;
    let nnz_per_agent: Vec<usize> = agents.iter().map(|a| a.nnz()).collect();
    let x0 = w.average();
    for ws in &mut agents {
        ws.set_state(&x0)?;
    }
    let mut residual_agents = agents.clone();
    let roi_total = (problem.roi_count() * n_agents) as f64;
    let started = Instant::now();

    let consensus = |w: &StackedState| -> Result<(StackedState, Vec<f64>)> {
        let center = match denoiser {
            Some(h) => h.denoise(&w.average())?,
            None => w.average(),
        };
        Ok((w.reflect_about(&center), center))
    };

    thread::scope(|scope| {
        let mut pool = Pool::start(scope, agents, config.workers, config.schedule);
        let mut log = ConvergenceLog {
            pnp: denoiser.is_some(),
            records: Vec::new(),
        };
        let mut converged = false;
        let mut equits = 0.0;
        let mut early_peak: f64 = w.norm();
        for iter in 1..=config.max_outer {
            let (v, _) = consensus(&w)?;
            let (reflected, updates) = pool.step(&v)?;
            let w_new = mann_step(&w, &reflected, config.rho)?;
            let change = relative_change(&w_new, &w);
            w = w_new;
            if config.track_equits {
                equits = updates.iter().sum::<u64>() as f64 / roi_total;
            }

            let (_, image) = consensus(&w)?;
            let nrmse_vs_ref = match &options.reference {
                Some(r) => nrmse(&image, r)?,
                None => f64::NAN,
            };
            let w_norm = w.norm();
            if iter <= DIVERGENCE_WARMUP {
                early_peak = early_peak.max(w_norm);
            }
            let diverged = !change.is_finite()
                || !w_norm.is_finite()
                || (iter > DIVERGENCE_WARMUP && w_norm > DIVERGENCE_FACTOR * early_peak);
            converged = !diverged
                && (change < config.tol || options.stop_at_nrmse.is_some_and(|t| nrmse_vs_ref < t));
            let (r_f, r_balance) = if config.residual_every > 0
                && (iter % config.residual_every == 0 || converged)
            {
                let r = residuals_with(&mut residual_agents, &w, denoiser)?;
                (r.r_f, r.r_h.unwrap_or(r.r_u))
            } else {
                (f64::NAN, f64::NAN)
            };
            log.records.push(LogRecord {
                iter,
                equits,
                mann_update_relnorm: change,
                r_f,
                r_balance,
                nrmse_vs_ref,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            if converged || diverged {
                break;
            }
        }
        let workspaces = pool.finish();
        let (_, image) = consensus(&w)?;
        if !converged {
            return Err(Error::ConsensusNotConverged {
                log: Box::new(log),
                last_iterate: image,
            });
        }
        let residuals = residuals_with(&mut residual_agents, &w, denoiser)?;
        if let Some(last) = log.records.last_mut() {
            last.r_f = residuals.r_f;
            last.r_balance = residuals.r_h.unwrap_or(residuals.r_u);
        }
        let states = StackedState {
            components: workspaces.iter().map(|ws| ws.state().to_vec()).collect(),
        };
        Ok(MaceOutcome {
            image,
            w,
            states,
            log,
            residuals,
            nnz_per_agent,
            equits,
        })
    })
}

/// Equilibrium residuals of the stack `w`, with each agent's proximal map
/// solved by ICD to [`RESIDUAL_PROX_TOL`].
pub fn equilibrium_residuals(w: &StackedState, problem: &Problem, config: &MaceConfig) -> Result<ResidualReport> {
    config.validate()?;
    let mut agents = build_agents(problem, config)?;
    match config.mode {
        Mode::Conventional { .. } => residuals_with(&mut agents, w, None),
        Mode::Pnp { denoiser } => {
            let h = denoiser.build(problem.side)?;
            residuals_with(&mut agents, w, Some(h.as_ref()))
        }
    }
}

/// As [`equilibrium_residuals`] with an explicit denoiser.
pub fn equilibrium_residuals_with(
    w: &StackedState,
    problem: &Problem,
    config: &MaceConfig,
    denoiser: &dyn Denoiser,
) -> Result<ResidualReport> {
    config.validate()?;
    let mut agents = build_agents(problem, config)?;
    residuals_with(&mut agents, w, Some(denoiser))
}

fn residuals_with(
    agents: &mut [AgentWorkspace],
    w: &StackedState,
    denoiser: Option<&dyn Denoiser>,
) -> Result<ResidualReport> {
    check_len(agents.len(), w.n_agents(), "stack components")?;
    let w_bar = w.average();
    let x_hat = match denoiser {
        Some(h) => h.denoise(&w_bar)?,
        None => w_bar.clone(),
    };
    let scale = norm(&x_hat);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    // Conventional: u_i = mean(w) - w_i.  PnP: t_i = x - w_i, alpha = mean(w) - x.
    let n_agents = w.n_agents() as f64;
    let mut r_f: f64 = 0.0;
    let mut balance = vec![0.0; x_hat.len()];
    for (ws, wi) in agents.iter_mut().zip(&w.components) {
        let offset: Vec<f64> = match denoiser {
            Some(_) => x_hat.iter().zip(wi).map(|(x, w)| x - w).collect(),
            None => w_bar.iter().zip(wi).map(|(m, w)| m - w).collect(),
        };
        let probe: Vec<f64> = x_hat.iter().zip(&offset).map(|(x, o)| x + o).collect();
        ws.set_state(&x_hat)?;
        let fx = ws.prox_solve(&probe, RESIDUAL_PROX_TOL)?;
        let d: Vec<f64> = fx.iter().zip(&x_hat).map(|(a, b)| a - b).collect();
        r_f = r_f.max(norm(&d) / scale);
        for (b, o) in balance.iter_mut().zip(&offset) {
            *b += o;
        }
    }
    let r_h = match denoiser {
        Some(h) => {
            for (b, (m, x)) in balance.iter_mut().zip(w_bar.iter().zip(&x_hat)) {
                *b += n_agents * (m - x);
            }
            let hx = h.denoise(&w_bar)?;
            let d: Vec<f64> = hx.iter().zip(&x_hat).map(|(a, b)| a - b).collect();
            Some(norm(&d) / scale)
        }
        None => None,
    };
    Ok(ResidualReport {
        r_u: norm(&balance) / scale,
        x_hat,
        r_f,
        r_h,
    })
}

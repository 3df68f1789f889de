//! Iterative coordinate descent: single-pixel updates, the one-pass partial
//! proximal update, converged proximal maps and the centralized MAP solver.
//!
//! An [`AgentWorkspace`] minimizes
//!
//! ```text
//! sum_{k in J} 1/2 |y_k - A_k z|^2_{Lambda_k} + beta_eff h(z) + |z - v|^2 / (2 sigma^2)
//! ```
//!
//! one pixel at a time in raster order, keeping the error sinogram
//! `e = y - A z` up to date so each update only touches one matrix column.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::geometry::ViewSubset;
use crate::models::{qggmrf_surrogate_coeff, Neighborhood, PriorKind, PriorParams, Problem};

/// Passes between full recomputations of the error sinogram.
pub const ERROR_REFRESH_PASSES: u64 = 50;

pub const PROX_MAX_PASSES: usize = 500;
pub const MAP_MAX_PASSES: usize = 1000;

#[derive(Clone, Debug)]
pub struct AgentWorkspace {
    pub subset: ViewSubset,
    side: usize,
    // Columns of the stacked subset matrix, one per pixel.
    col_start: Vec<usize>,
    col_rows: Vec<u32>,
    col_vals: Vec<f64>,
    data_curvature: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
    error: Vec<f64>,
    state: Vec<f64>,
    inv_sigma_sq: f64,
    prior: PriorParams,
    neighborhood: Neighborhood,
    clamp_nonnegative: bool,
    roi: Option<Arc<Vec<bool>>>,
    roi_updates: u64,
    passes: u64,
}

impl AgentWorkspace {
    /// Agent `subset` of an `n_subsets`-way split: prior weight `beta / n_subsets`
    /// and proximal parameter `sigma`. The state starts at zero.
    pub fn new(
        problem: &Problem,
        subset: ViewSubset,
        n_subsets: usize,
        sigma: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        if n_subsets == 0 || subset.subset_index >= n_subsets {
            return Err(Error::InvalidParameter("subset index out of range".into()));
        }
        Self::build(problem, subset, beta / n_subsets as f64, 1.0 / (sigma * sigma))
    }

    /// All views, full prior weight and no proximal term.
    pub fn centralized(problem: &Problem, beta: f64) -> Result<Self> {
        let subset = ViewSubset {
            subset_index: 0,
            view_indices: (0..problem.n_views()).collect(),
        };
        Self::build(problem, subset, beta, 0.0)
    }

    fn build(problem: &Problem, subset: ViewSubset, beta_eff: f64, inv_sigma_sq: f64) -> Result<Self> {
        let prior = problem.prior.with_beta(beta_eff);
        prior.validate()?;
        let n = problem.n_pixels();
        let n_channels = problem.data.n_channels();
        let n_rows = subset.view_indices.len() * n_channels;

        let mut y = Vec::with_capacity(n_rows);
        let mut weights = Vec::with_capacity(n_rows);
        let mut counts = vec![0usize; n + 1];
        for &k in &subset.view_indices {
            if k >= problem.n_views() {
                return Err(Error::InvalidParameter(format!("view {k} out of range")));
            }
            y.extend_from_slice(problem.data.data.view(k));
            weights.extend_from_slice(problem.data.weights.view(k));
            for row in &problem.matrices[k].rows {
                for &(j, _) in row {
                    counts[j as usize + 1] += 1;
                }
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_start = counts;
        let nnz = col_start[n];
        let mut fill = col_start.clone();
        let mut col_rows = vec![0u32; nnz];
        let mut col_vals = vec![0.0; nnz];
        let mut data_curvature = vec![0.0; n];
        for (local_view, &k) in subset.view_indices.iter().enumerate() {
            for (d, row) in problem.matrices[k].rows.iter().enumerate() {
                let r = local_view * n_channels + d;
                for &(j, a) in row {
                    let j = j as usize;
                    col_rows[fill[j]] = r as u32;
                    col_vals[fill[j]] = a;
                    fill[j] += 1;
                    data_curvature[j] += weights[r] * a * a;
                }
            }
        }

        let mut ws = AgentWorkspace {
            subset,
            side: problem.side,
            col_start,
            col_rows,
            col_vals,
            data_curvature,
            error: y.clone(),
            y,
            weights,
            state: vec![0.0; n],
            inv_sigma_sq,
            prior,
            neighborhood: Neighborhood::new(problem.side),
            clamp_nonnegative: false,
            roi: problem.roi.clone(),
            roi_updates: 0,
            passes: 0,
        };
        ws.refresh_error();
        Ok(ws)
    }

    /// Restricts every pixel update to nonnegative results. Off by default;
    /// with it on the partial update no longer matches the unconstrained
    /// closed form.
    pub fn set_clamp_nonnegative(&mut self, on: bool) {
        self.clamp_nonnegative = on;
    }

    pub fn n_pixels(&self) -> usize {
        self.state.len()
    }

    /// Nonzeros of this agent's share of the system matrix.
    pub fn nnz(&self) -> usize {
        self.col_vals.len()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn error_sinogram(&self) -> &[f64] {
        &self.error
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    /// Pixel updates that landed inside the region of interest.
    pub fn roi_updates(&self) -> u64 {
        self.roi_updates
    }

    pub fn set_state(&mut self, x: &[f64]) -> Result<()> {
        check_len(self.state.len(), x.len(), "agent state")?;
        self.state.copy_from_slice(x);
        self.refresh_error();
        Ok(())
    }

    /// Recomputes `e = y - A z` from scratch.
    pub fn refresh_error(&mut self) {
        self.error.copy_from_slice(&self.y);
        for (j, &zj) in self.state.iter().enumerate() {
            if zj != 0.0 {
                for idx in self.col_start[j]..self.col_start[j + 1] {
                    self.error[self.col_rows[idx] as usize] -= self.col_vals[idx] * zj;
                }
            }
        }
    }

    /// Largest deviation of the maintained error sinogram from a fresh
    /// computation, relative to `max(|y|_inf, 1)`.
    pub fn error_drift(&self) -> f64 {
        let mut fresh = self.clone();
        fresh.refresh_error();
        let scale = self.y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        self.error
            .iter()
            .zip(&fresh.error)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// Local objective `f_i(z) + |z - v|^2 / (2 sigma^2)` at the current state.
    pub fn objective(&self, v: &[f64]) -> f64 {
        let data: f64 = self
            .error
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| 0.5 * w * e * e)
            .sum();
        let prior = crate::models::prior_cost(&self.state, self.side, &self.prior).unwrap_or(f64::NAN);
        let prox: f64 = self
            .state
            .iter()
            .zip(v)
            .map(|(z, v)| (z - v) * (z - v))
            .sum::<f64>()
            * 0.5
            * self.inv_sigma_sq;
        data + prior + prox
    }

    /// First derivative and curvature of the prior along pixel `s`. For the
    /// Q-GGMRF prior this is the symmetric-bound surrogate at the current state.
    fn prior_terms(&self, s: usize) -> (f64, f64) {
        let beta = self.prior.beta;
        if beta == 0.0 {
            return (0.0, 0.0);
        }
        let zs = self.state[s];
        let ridge = self.prior.ridge;
        let (mut grad, mut curv) = (2.0 * ridge * zs, 2.0 * ridge);
        match self.prior.kind {
            PriorKind::QuadraticMrf => {
                for (r, w) in self.neighborhood.neighbors(s) {
                    grad += w * (zs - self.state[r]);
                    curv += w;
                }
            }
            PriorKind::Qggmrf { p, q, t, sigma_x } => {
                for (r, w) in self.neighborhood.neighbors(s) {
                    let d = zs - self.state[r];
                    let b = qggmrf_surrogate_coeff(d, p, q, t, sigma_x);
                    grad += 2.0 * w * b * d;
                    curv += 2.0 * w * b;
                }
            }
        }
        (beta * grad, beta * curv)
    }

    /// One coordinate step at pixel `s` toward the proximal target `v`.
    /// Returns the applied step; a pixel with no curvature at all is left
    /// untouched.
    pub fn pixel_update(&mut self, s: usize, v: &[f64]) -> f64 {
        let cols = self.col_start[s]..self.col_start[s + 1];
        let mut theta1 = 0.0;
        for idx in cols.clone() {
            let r = self.col_rows[idx] as usize;
            theta1 -= self.weights[r] * self.col_vals[idx] * self.error[r];
        }
        let (pg, pc) = self.prior_terms(s);
        let zs = self.state[s];
        let grad = theta1 + pg + self.inv_sigma_sq * (zs - v[s]);
        let curv = self.data_curvature[s] + pc + self.inv_sigma_sq;
        if !(curv > 0.0) {
            return 0.0;
        }
        let mut alpha = -grad / curv;
        if self.clamp_nonnegative && zs + alpha < 0.0 {
            alpha = -zs;
        }
        if alpha != 0.0 {
            self.state[s] = zs + alpha;
            for idx in cols {
                self.error[self.col_rows[idx] as usize] -= alpha * self.col_vals[idx];
            }
        }
        if self.roi.as_ref().is_none_or(|m| m[s]) {
            self.roi_updates += 1;
        }
        alpha
    }

    /// One raster pass of [`pixel_update`](Self::pixel_update) starting from
    /// the current state; returns the new state.
    pub fn partial_update_prox(&mut self, v: &[f64]) -> Result<&[f64]> {
        check_len(self.state.len(), v.len(), "proximal input")?;
        for s in 0..self.state.len() {
            self.pixel_update(s, v);
        }
        self.passes += 1;
        if self.passes.is_multiple_of(ERROR_REFRESH_PASSES) {
            self.refresh_error();
        }
        Ok(&self.state)
    }

    /// Repeats partial updates until the relative change of a pass drops
    /// below `tol`; returns the converged proximal map `F_i(v)`.
    pub fn prox_solve(&mut self, v: &[f64], tol: f64) -> Result<Vec<f64>> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        self.iterate_to_tolerance(v, tol, PROX_MAX_PASSES, "prox_solve")
            .map(|(z, _)| z)
    }

    fn iterate_to_tolerance(
        &mut self,
        v: &[f64],
        tol: f64,
        max_passes: usize,
        solver: &'static str,
    ) -> Result<(Vec<f64>, usize)> {
        let mut last_update = f64::INFINITY;
        for pass in 1..=max_passes {
            let before = self.state.clone();
            self.partial_update_prox(v)?;
            let (mut diff, mut norm) = (0.0, 0.0);
            for (a, b) in self.state.iter().zip(&before) {
                diff += (a - b) * (a - b);
                norm += a * a;
            }
            last_update = if diff == 0.0 { 0.0 } else { (diff / norm).sqrt() };
            if last_update < tol {
                return Ok((self.state.clone(), pass));
            }
        }
        Err(Error::NotConverged {
            solver,
            iterations: max_passes,
            last_update,
            last_iterate: self.state.clone(),
        })
    }
}

/// Result of the centralized ICD baseline.
#[derive(Clone, Debug)]
pub struct IcdSolution {
    pub image: Vec<f64>,
    pub passes: usize,
    /// Equits spent: ROI pixel updates over ROI size (one per full pass).
    pub equits: f64,
}

/// Minimizes the full MAP cost with ICD passes from a zero image until the
/// relative change of a pass is below `tol`.
pub fn icd_map_solve(problem: &Problem, beta: f64, tol: f64) -> Result<IcdSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let mut ws = AgentWorkspace::centralized(problem, beta)?;
    let unused = vec![0.0; problem.n_pixels()];
    let (image, passes) = ws.iterate_to_tolerance(&unused, tol, MAP_MAX_PASSES, "icd_map_solve")?;
    Ok(IcdSolution {
        image,
        passes,
        equits: ws.roi_updates() as f64 / problem.roi_count() as f64,
    })
}

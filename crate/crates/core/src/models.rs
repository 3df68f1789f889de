//! Weighted least-squares likelihood, MRF priors and the MAP objectives.
//!
//! The prior is defined over unordered 8-neighbour pixel pairs `{s, r}` with
//! weight 1 for edge neighbours and `1/sqrt(2)` for diagonal ones, scaled so
//! that an interior pixel's weights sum to one:
//!
//! ```text
//! quadratic:  h(x) = sum_{s,r} w_sr (x_s - x_r)^2 / 2 + ridge * |x|^2  = x' B x
//! q-ggmrf:    h(x) = sum_{s,r} w_sr rho(x_s - x_r)            + ridge * |x|^2
//! ```
//!
//! so `B = L/2 + ridge*I` with `L` the weighted graph Laplacian.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{check_len, Error, Result};
use crate::geometry::{check_matrix_dims, SparseViewMatrix, ViewSubset};
use crate::image::{Sinogram, SinogramSet};

/// Ridge that makes the quadratic prior matrix strictly positive definite.
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorKind {
    QuadraticMrf,
    Qggmrf { p: f64, q: f64, t: f64, sigma_x: f64 },
}

impl PriorKind {
    /// Q-GGMRF with the usual `p = 2, q = 1.2, T = 1` and the given scale.
    pub fn qggmrf(sigma_x: f64) -> Self {
        PriorKind::Qggmrf {
            p: 2.0,
            q: 1.2,
            t: 1.0,
            sigma_x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorParams {
    pub kind: PriorKind,
    pub beta: f64,
    pub ridge: f64,
}

impl PriorParams {
    pub fn quadratic(beta: f64) -> Self {
        PriorParams {
            kind: PriorKind::QuadraticMrf,
            beta,
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn qggmrf(beta: f64, sigma_x: f64) -> Self {
        PriorParams {
            kind: PriorKind::qggmrf(sigma_x),
            beta,
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be a finite nonnegative number");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be nonnegative");
        }
        if let PriorKind::Qggmrf { p, q, t, sigma_x } = self.kind {
            if !(1.0 <= q && q <= p && p <= 2.0) {
                return bad("q-ggmrf needs 1 <= q <= p <= 2");
            }
            if !(t > 0.0) || !(sigma_x > 0.0) {
                return bad("q-ggmrf needs T > 0 and sigma_x > 0");
            }
        }
        Ok(())
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, PriorKind::QuadraticMrf)
    }

    pub fn with_beta(self, beta: f64) -> Self {
        PriorParams { beta, ..self }
    }
}

/// Pairwise potential of the Q-GGMRF prior,
/// `|d|^p / (p sigma^p) * u^(q-p) / (1 + u^(q-p))` with `u = |d| / (T sigma)`.
pub fn qggmrf_potential(delta: f64, p: f64, q: f64, t: f64, sigma_x: f64) -> f64 {
    let a = delta.abs();
    if a == 0.0 {
        return 0.0;
    }
    // Written with u^(p-q) to avoid the 0 * inf at small |d|.
    let u = a / (t * sigma_x);
    a.powf(p) / (p * sigma_x.powf(p) * (1.0 + u.powf(p - q)))
}

/// Symmetric-bound curvature `rho'(d) / (2 d)` of the Q-GGMRF potential.
///
/// For `p < 2` the limit at `d = 0` is infinite; the coefficient is then
/// evaluated at a vanishing floor `1e-12 T sigma`.
pub fn qggmrf_surrogate_coeff(delta: f64, p: f64, q: f64, t: f64, sigma_x: f64) -> f64 {
    let floor = 1e-12 * t * sigma_x;
    let a = if p < 2.0 { delta.abs().max(floor) } else { delta.abs() };
    let c = (t * sigma_x).powf(q - p);
    let car = if a == 0.0 { 0.0 } else { c * a.powf(p - q) };
    let lead = if p == 2.0 { 1.0 } else { a.powf(p - 2.0) };
    lead * (p + q * car) / (2.0 * p * sigma_x.powf(p) * (1.0 + car).powi(2))
}

/// Forward neighbour offsets `(drow, dcol, unnormalized weight)`; each
/// unordered pair is visited once.
const FORWARD: [(isize, isize, f64); 4] = [
    (0, 1, 1.0),
    (1, -1, FRAC_1_SQRT_2),
    (1, 0, 1.0),
    (1, 1, FRAC_1_SQRT_2),
];

const ALL: [(isize, isize, f64); 8] = [
    (-1, -1, FRAC_1_SQRT_2),
    (-1, 0, 1.0),
    (-1, 1, FRAC_1_SQRT_2),
    (0, -1, 1.0),
    (0, 1, 1.0),
    (1, -1, FRAC_1_SQRT_2),
    (1, 0, 1.0),
    (1, 1, FRAC_1_SQRT_2),
];

fn weight_norm() -> f64 {
    4.0 + 4.0 * FRAC_1_SQRT_2
}

/// 8-neighbourhood of a square grid with normalized symmetric weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    pub side: usize,
}

impl Neighborhood {
    pub fn new(side: usize) -> Self {
        Neighborhood { side }
    }

    fn offset(&self, s: usize, dr: isize, dc: isize) -> Option<usize> {
        let (r, c) = ((s / self.side) as isize + dr, (s % self.side) as isize + dc);
        let n = self.side as isize;
        (r >= 0 && c >= 0 && r < n && c < n).then(|| (r * n + c) as usize)
    }

    /// All in-bounds neighbours of pixel `s` with their weights.
    pub fn neighbors(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let z = weight_norm();
        ALL.iter()
            .filter_map(move |&(dr, dc, w)| self.offset(s, dr, dc).map(|r| (r, w / z)))
    }

    /// Every unordered neighbour pair once, as `(s, r, w_sr)` with `s < r`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let z = weight_norm();
        (0..self.side * self.side).flat_map(move |s| {
            FORWARD
                .iter()
                .filter_map(move |&(dr, dc, w)| self.offset(s, dr, dc).map(|r| (s, r, w / z)))
        })
    }

    /// `L x` for the weighted graph Laplacian (`x' L x = sum w (x_s - x_r)^2`).
    pub fn laplacian_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (s, r, w) in self.pairs() {
            let d = w * (x[s] - x[r]);
            out[s] += d;
            out[r] -= d;
        }
        out
    }
}

/// Diagonal weights `Lambda` for the likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightModel {
    /// All weights one.
    Identity,
    /// `exp(-y)` rescaled to mean one, mimicking transmission photon counts.
    #[default]
    Transmission,
}

impl WeightModel {
    /// Mean-one weights computed from noiseless projections.
    pub fn weights(&self, clean: &Sinogram) -> Sinogram {
        let values = match self {
            WeightModel::Identity => vec![1.0; clean.values.len()],
            WeightModel::Transmission => {
                let raw: Vec<f64> = clean.values.iter().map(|&y| (-y).exp()).collect();
                let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
                raw.into_iter().map(|w| w / mean).collect()
            }
        };
        Sinogram {
            n_views: clean.n_views,
            n_channels: clean.n_channels,
            values,
        }
    }
}

/// `sum_k 1/2 |y_k - A_k x|^2_{Lambda_k}` over the given views.
pub fn likelihood_cost_views(
    data: &SinogramSet,
    matrices: &[SparseViewMatrix],
    views: impl IntoIterator<Item = usize>,
    x: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    let mut ax = vec![0.0; data.n_channels()];
    for k in views {
        let m = &matrices[k];
        check_len(data.n_channels(), m.rows.len(), "channels per view")?;
        m.apply(x, &mut ax);
        let y = data.data.view(k);
        let w = data.weights.view(k);
        total += ax
            .iter()
            .zip(y)
            .zip(w)
            .map(|((&a, &y), &w)| 0.5 * w * (y - a) * (y - a))
            .sum::<f64>();
    }
    Ok(total)
}

pub fn likelihood_cost(
    data: &SinogramSet,
    matrices: &[SparseViewMatrix],
    x: &[f64],
) -> Result<f64> {
    check_len(data.n_views(), matrices.len(), "views")?;
    check_matrix_dims(matrices, x.len())?;
    likelihood_cost_views(data, matrices, 0..matrices.len(), x)
}

/// `beta * h(x)` for an image of side `side`.
pub fn prior_cost(x: &[f64], side: usize, params: &PriorParams) -> Result<f64> {
    params.validate()?;
    check_len(side * side, x.len(), "image pixels")?;
    let nb = Neighborhood::new(side);
    let pair_sum: f64 = match params.kind {
        PriorKind::QuadraticMrf => nb
            .pairs()
            .map(|(s, r, w)| 0.5 * w * (x[s] - x[r]).powi(2))
            .sum(),
        PriorKind::Qggmrf { p, q, t, sigma_x } => nb
            .pairs()
            .map(|(s, r, w)| w * qggmrf_potential(x[s] - x[r], p, q, t, sigma_x))
            .sum(),
    };
    let ridge = params.ridge * x.iter().map(|v| v * v).sum::<f64>();
    Ok(params.beta * (pair_sum + ridge))
}

/// Gradient of `beta * h(x)`.
pub fn prior_gradient(x: &[f64], side: usize, params: &PriorParams) -> Result<Vec<f64>> {
    params.validate()?;
    check_len(side * side, x.len(), "image pixels")?;
    let nb = Neighborhood::new(side);
    let mut g: Vec<f64> = x.iter().map(|&v| 2.0 * params.ridge * v).collect();
    for (s, r, w) in nb.pairs() {
        let d = x[s] - x[r];
        let dh = match params.kind {
            PriorKind::QuadraticMrf => w * d,
            PriorKind::Qggmrf { p, q, t, sigma_x } => {
                2.0 * w * qggmrf_surrogate_coeff(d, p, q, t, sigma_x) * d
            }
        };
        g[s] += dh;
        g[r] -= dh;
    }
    for v in &mut g {
        *v *= params.beta;
    }
    Ok(g)
}

/// Tomographic MAP problem: geometry-derived matrices, data and prior.
#[derive(Clone, Debug)]
pub struct Problem {
    pub side: usize,
    pub matrices: std::sync::Arc<Vec<SparseViewMatrix>>,
    pub data: SinogramSet,
    pub prior: PriorParams,
    /// Pixels counted for equit accounting; `None` means the whole image.
    pub roi: Option<std::sync::Arc<Vec<bool>>>,
}

impl Problem {
    pub fn new(
        side: usize,
        matrices: Vec<SparseViewMatrix>,
        data: SinogramSet,
        prior: PriorParams,
    ) -> Result<Self> {
        prior.validate()?;
        check_len(matrices.len(), data.n_views(), "sinogram views")?;
        let n = side * side;
        for m in &matrices {
            check_len(data.n_channels(), m.rows.len(), "channels per view")?;
            if m.rows.iter().flatten().any(|&(j, _)| j as usize >= n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: n + 1,
                    context: "system matrix pixel index",
                });
            }
        }
        Ok(Problem {
            side,
            matrices: std::sync::Arc::new(matrices),
            data,
            prior,
            roi: None,
        })
    }

    pub fn with_roi(mut self, roi: Vec<bool>) -> Result<Self> {
        check_len(self.n_pixels(), roi.len(), "roi mask")?;
        if !roi.iter().any(|&b| b) {
            return Err(Error::InvalidParameter("empty region of interest".into()));
        }
        self.roi = Some(std::sync::Arc::new(roi));
        Ok(self)
    }

    pub fn n_pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn n_views(&self) -> usize {
        self.matrices.len()
    }

    pub fn roi_count(&self) -> usize {
        self.roi
            .as_ref()
            .map_or(self.n_pixels(), |m| m.iter().filter(|&&b| b).count())
    }

    pub fn total_nnz(&self) -> usize {
        self.matrices.iter().map(SparseViewMatrix::nnz).sum()
    }

    /// Global MAP cost `f(x; beta)`.
    pub fn map_cost(&self, x: &[f64], beta: f64) -> Result<f64> {
        check_len(self.n_pixels(), x.len(), "image pixels")?;
        let like = likelihood_cost_views(&self.data, &self.matrices, 0..self.n_views(), x)?;
        if beta == 0.0 {
            return Ok(like);
        }
        Ok(like + prior_cost(x, self.side, &self.prior.with_beta(beta))?)
    }

    /// Local cost `f_i(x; beta)` of one view subset; the prior enters with
    /// weight `beta / n_subsets`.
    pub fn local_cost(
        &self,
        subset: &ViewSubset,
        n_subsets: usize,
        x: &[f64],
        beta: f64,
    ) -> Result<f64> {
        check_len(self.n_pixels(), x.len(), "image pixels")?;
        if subset.subset_index >= n_subsets {
            return Err(Error::InvalidParameter(format!(
                "subset {} out of {} subsets",
                subset.subset_index, n_subsets
            )));
        }
        let like = likelihood_cost_views(
            &self.data,
            &self.matrices,
            subset.view_indices.iter().copied(),
            x,
        )?;
        if beta == 0.0 {
            return Ok(like);
        }
        let prior = prior_cost(x, self.side, &self.prior.with_beta(beta / n_subsets as f64))?;
        Ok(like + prior)
    }

    /// Gradient of `f(x; beta)`.
    pub fn map_gradient(&self, x: &[f64], beta: f64) -> Result<Vec<f64>> {
        let mut g = self.likelihood_gradient(0..self.n_views(), x)?;
        if beta != 0.0 {
            let gp = prior_gradient(x, self.side, &self.prior.with_beta(beta))?;
            g.iter_mut().zip(gp).for_each(|(a, b)| *a += b);
        }
        Ok(g)
    }

    /// Gradient of `sum_{k in views} 1/2 |y_k - A_k x|^2_{Lambda_k}`.
    pub fn likelihood_gradient(
        &self,
        views: impl IntoIterator<Item = usize>,
        x: &[f64],
    ) -> Result<Vec<f64>> {
        check_len(self.n_pixels(), x.len(), "image pixels")?;
        let mut g = vec![0.0; x.len()];
        let mut r = vec![0.0; self.data.n_channels()];
        for k in views {
            let m = &self.matrices[k];
            m.apply(x, &mut r);
            for ((ri, &y), &w) in r.iter_mut().zip(self.data.data.view(k)).zip(self.data.weights.view(k)) {
                *ri = w * (*ri - y);
            }
            m.apply_transpose_add(&r, &mut g);
        }
        Ok(g)
    }
}

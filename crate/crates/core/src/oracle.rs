//! Dense ground truth for small problems.
//!
//! Everything here assembles explicit matrices and solves them directly, so
//! it shares no code path with the ICD and consensus solvers it checks:
//! MAP and proximal solves by Cholesky, the closed-form one-pass ICD map
//! `(L~ + I/s^2)^-1 (b + v/s^2 - L' x)`, the affine partial-update iteration
//! and its first-order expansion, and a serial two-agent plug-and-play solve.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn};

use crate::denoise::Denoiser;
use crate::error::{check_len, Error, Result};
use crate::geometry::{partition_views, ViewSubset};
use crate::metrics::norm;
use crate::models::{Neighborhood, Problem};

pub const DENSE_PIXEL_LIMIT: usize = 4096;
pub const ITERATION_MATRIX_LIMIT: usize = 8192;

fn check_dense_size(n: usize) -> Result<()> {
    if n > DENSE_PIXEL_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: DENSE_PIXEL_LIMIT,
        });
    }
    Ok(())
}

/// `A' Lambda A` and `A' Lambda y` over the given views.
pub fn data_normal_equations(
    problem: &Problem,
    views: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = problem.n_pixels();
    check_dense_size(n)?;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for &k in views {
        let y = problem.data.data.view(k);
        let w = problem.data.weights.view(k);
        for (d, row) in problem.matrices[k].rows.iter().enumerate() {
            let wd = w[d];
            if wd == 0.0 {
                continue;
            }
            for &(j, a) in row {
                let j = j as usize;
                b[j] += wd * a * y[d];
                for &(l, c) in row {
                    h[(l as usize, j)] += wd * a * c;
                }
            }
        }
    }
    Ok((h, b))
}

/// Weighted graph Laplacian `L` with `x' L x = sum_{s,r} w_sr (x_s - x_r)^2`.
pub fn laplacian_matrix(side: usize) -> DMatrix<f64> {
    let n = side * side;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for (s, r, w) in Neighborhood::new(side).pairs() {
        l[(s, s)] += w;
        l[(r, r)] += w;
        l[(s, r)] -= w;
        l[(r, s)] -= w;
    }
    l
}

/// Quadratic prior matrix `B = L/2 + ridge I`, so that `h(x) = x' B x`.
pub fn prior_matrix(side: usize, ridge: f64) -> DMatrix<f64> {
    let n = side * side;
    laplacian_matrix(side) * 0.5 + DMatrix::<f64>::identity(n, n) * ridge
}

fn require_quadratic(problem: &Problem, beta: f64) -> Result<()> {
    if beta != 0.0 && !problem.prior.is_quadratic() {
        return Err(Error::InvalidParameter(
            "dense oracles need a quadratic prior".into(),
        ));
    }
    Ok(())
}

fn spd_solve(m: DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    m.lu().solve(rhs).ok_or(Error::Singular(what))
}

/// Direct MAP solve of `(A' Lambda A + 2 beta B) x = A' Lambda y`.
pub fn dense_map_oracle(problem: &Problem, beta: f64) -> Result<Vec<f64>> {
    require_quadratic(problem, beta)?;
    let views: Vec<usize> = (0..problem.n_views()).collect();
    let (mut h, b) = data_normal_equations(problem, &views)?;
    if beta != 0.0 {
        h += prior_matrix(problem.side, problem.prior.ridge) * (2.0 * beta);
    }
    let x = spd_solve(h, &b, "dense MAP oracle")?;
    Ok(x.as_slice().to_vec())
}

/// Minimizer of `f(x; 0) + strength / (2 sigma^2) x' L x`, the fixed point of
/// plug-and-play with the quadratic-prox denoiser of that strength.
pub fn dense_composite_oracle(problem: &Problem, strength: f64, sigma: f64) -> Result<Vec<f64>> {
    let views: Vec<usize> = (0..problem.n_views()).collect();
    let (h, b) = data_normal_equations(problem, &views)?;
    let h = h + laplacian_matrix(problem.side) * (strength / (sigma * sigma));
    let x = spd_solve(h, &b, "dense composite oracle")?;
    Ok(x.as_slice().to_vec())
}

/// Dense quadratic models of every agent's local cost:
/// `f_i(x) = 1/2 x' H_i x - b_i' x + const` with
/// `H_i = A_i' Lambda_i A_i + 2 (beta/N) B` and `b_i = A_i' Lambda_i y_i`.
#[derive(Clone, Debug)]
pub struct DenseAgents {
    pub subsets: Vec<ViewSubset>,
    pub hessians: Vec<DMatrix<f64>>,
    pub rhs: Vec<DVector<f64>>,
}

impl DenseAgents {
    pub fn new(problem: &Problem, n_subsets: usize, beta: f64) -> Result<Self> {
        require_quadratic(problem, beta)?;
        let subsets = partition_views(problem.n_views(), n_subsets)?;
        let prior = (beta != 0.0).then(|| {
            prior_matrix(problem.side, problem.prior.ridge) * (2.0 * beta / n_subsets as f64)
        });
        let mut hessians = Vec::with_capacity(n_subsets);
        let mut rhs = Vec::with_capacity(n_subsets);
        for s in &subsets {
            let (mut h, b) = data_normal_equations(problem, &s.view_indices)?;
            if let Some(p) = &prior {
                h += p;
            }
            hessians.push(h);
            rhs.push(b);
        }
        Ok(DenseAgents {
            subsets,
            hessians,
            rhs,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.subsets.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.rhs.first().map_or(0, |b| b.len())
    }

    pub fn gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let g = &self.hessians[i] * DVector::from_column_slice(x) - &self.rhs[i];
        g.as_slice().to_vec()
    }

    /// Factorization of `H_i + I / sigma^2` for repeated proximal solves.
    pub fn prox_factor(&self, i: usize, sigma: f64) -> Result<ProxFactor> {
        ProxFactor::new(&self.hessians[i], &self.rhs[i], sigma)
    }

    /// Exact proximal map `F_i(v; sigma)`.
    pub fn prox(&self, i: usize, v: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.prox_factor(i, sigma)?.apply(v)
    }

    /// Closed form of one raster ICD pass from state `x`:
    /// `(L~_i + I/sigma^2) z = b_i + v/sigma^2 - L_i' x`, solved by forward
    /// substitution.
    pub fn partial_update(&self, i: usize, v: &[f64], x: &[f64], sigma: f64) -> Vec<f64> {
        let h = &self.hessians[i];
        let b = &self.rhs[i];
        let inv = 1.0 / (sigma * sigma);
        let n = b.len();
        let mut z = vec![0.0; n];
        for s in 0..n {
            let mut acc = b[s] + inv * v[s];
            for r in 0..s {
                acc -= h[(s, r)] * z[r];
            }
            for r in s + 1..n {
                acc -= h[(s, r)] * x[r];
            }
            z[s] = acc / (h[(s, s)] + inv);
        }
        z
    }
}

/// Cholesky factor of `H + I / sigma^2` together with `b`.
pub struct ProxFactor {
    chol: Cholesky<f64, Dyn>,
    rhs: DVector<f64>,
    inv_sigma_sq: f64,
}

impl ProxFactor {
    pub fn new(h: &DMatrix<f64>, b: &DVector<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        let inv_sigma_sq = 1.0 / (sigma * sigma);
        let n = b.len();
        let m = h + DMatrix::<f64>::identity(n, n) * inv_sigma_sq;
        let chol = m.cholesky().ok_or(Error::Singular("dense proximal map"))?;
        Ok(ProxFactor {
            chol,
            rhs: b.clone(),
            inv_sigma_sq,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rhs.len(), v.len(), "proximal input")?;
        let rhs = &self.rhs + DVector::from_column_slice(v) * self.inv_sigma_sq;
        Ok(self.chol.solve(&rhs).as_slice().to_vec())
    }
}

/// Dense proximal map of agent `i` of an `n_subsets`-way split.
pub fn dense_prox_oracle(
    problem: &Problem,
    n_subsets: usize,
    i: usize,
    v: &[f64],
    sigma: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    DenseAgents::new(problem, n_subsets, beta)?.prox(i, v, sigma)
}

/// Affine map `z -> M z + c` on the stacked state `z = (w, X)`.
#[derive(Clone, Debug)]
pub struct AffineIteration {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineIteration {
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.matrix * z + &self.offset
    }

    /// Solves `(I - M) z = c`.
    pub fn fixed_point(&self) -> Result<DVector<f64>> {
        let n = self.offset.len();
        (DMatrix::<f64>::identity(n, n) - &self.matrix)
            .lu()
            .solve(&self.offset)
            .ok_or(Error::Singular("affine iteration fixed point"))
    }
}

fn reflect_consensus(w: &[f64], n: usize) -> Vec<f64> {
    let n_agents = w.len() / n;
    let mut mean = vec![0.0; n];
    for comp in w.chunks(n) {
        for (m, &x) in mean.iter_mut().zip(comp) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_agents as f64);
    w.chunks(n)
        .flat_map(|comp| comp.iter().zip(&mean).map(|(&x, &m)| 2.0 * m - x).collect::<Vec<_>>())
        .collect()
}

/// One step of the partial-update consensus iteration on `z = (w, X)` using
/// the closed-form one-pass ICD map.
pub fn exact_step(agents: &DenseAgents, z: &[f64], sigma: f64, rho: f64) -> Vec<f64> {
    let n = agents.n_pixels();
    let nn = n * agents.n_agents();
    let (w, x) = z.split_at(nn);
    let v = reflect_consensus(w, n);
    let mut out = vec![0.0; 2 * nn];
    for i in 0..agents.n_agents() {
        let r = i * n..(i + 1) * n;
        let xi = agents.partial_update(i, &v[r.clone()], &x[r.clone()], sigma);
        for (k, s) in r.enumerate() {
            out[s] = rho * (2.0 * xi[k] - v[s]) + (1.0 - rho) * w[s];
            out[nn + s] = xi[k];
        }
    }
    out
}

/// Assembles the exact affine iteration by pushing basis vectors through
/// [`exact_step`] and subtracting its constant term.
pub fn exact_iteration(agents: &DenseAgents, sigma: f64, rho: f64) -> Result<AffineIteration> {
    let dim = 2 * agents.n_pixels() * agents.n_agents();
    if dim > ITERATION_MATRIX_LIMIT {
        return Err(Error::TooLarge {
            size: dim,
            limit: ITERATION_MATRIX_LIMIT,
        });
    }
    let zero = vec![0.0; dim];
    let offset = DVector::from_vec(exact_step(agents, &zero, sigma, rho));
    let mut matrix = DMatrix::<f64>::zeros(dim, dim);
    let mut basis = zero;
    for j in 0..dim {
        basis[j] = 1.0;
        let col = exact_step(agents, &basis, sigma, rho);
        basis[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            matrix[(i, j)] = v - offset[i];
        }
    }
    Ok(AffineIteration { matrix, offset })
}

/// First-order expansion in `eps = sigma^2` of the iteration matrix:
///
/// ```text
/// [ rho (I - 2 eps L~)(2G - I) + (1 - rho) I    -2 rho eps L' ]
/// [ (I - eps L~)(2G - I)                          -eps L'      ]
/// ```
pub fn first_order_matrix(agents: &DenseAgents, sigma: f64, rho: f64) -> Result<DMatrix<f64>> {
    let n = agents.n_pixels();
    let n_agents = agents.n_agents();
    let nn = n * n_agents;
    if 2 * nn > ITERATION_MATRIX_LIMIT {
        return Err(Error::TooLarge {
            size: 2 * nn,
            limit: ITERATION_MATRIX_LIMIT,
        });
    }
    let eps = sigma * sigma;
    let mut lower_diag = DMatrix::<f64>::zeros(nn, nn);
    let mut strict_lower_t = DMatrix::<f64>::zeros(nn, nn);
    for (i, h) in agents.hessians.iter().enumerate() {
        let o = i * n;
        for s in 0..n {
            for r in 0..=s {
                lower_diag[(o + s, o + r)] = h[(s, r)];
                if r < s {
                    strict_lower_t[(o + r, o + s)] = h[(s, r)];
                }
            }
        }
    }
    let mut reflect = DMatrix::<f64>::zeros(nn, nn);
    for a in 0..n_agents {
        for b in 0..n_agents {
            for s in 0..n {
                reflect[(a * n + s, b * n + s)] = 2.0 / n_agents as f64;
            }
        }
    }
    let id = DMatrix::<f64>::identity(nn, nn);
    reflect -= &id;

    let top_left = (&id - &lower_diag * (2.0 * eps)) * &reflect * rho + &id * (1.0 - rho);
    let top_right = &strict_lower_t * (-2.0 * rho * eps);
    let bottom_left = (&id - &lower_diag * eps) * &reflect;
    let bottom_right = &strict_lower_t * (-eps);

    let mut m = DMatrix::<f64>::zeros(2 * nn, 2 * nn);
    m.view_mut((0, 0), (nn, nn)).copy_from(&top_left);
    m.view_mut((0, nn), (nn, nn)).copy_from(&top_right);
    m.view_mut((nn, 0), (nn, nn)).copy_from(&bottom_left);
    m.view_mut((nn, nn), (nn, nn)).copy_from(&bottom_right);
    Ok(m)
}

pub fn spectral_radius(eigenvalues: &[Complex<f64>]) -> f64 {
    eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.re.total_cmp(&b.re)));
    ev
}

/// Spectra of the exact and first-order partial-update iteration matrices.
#[derive(Clone, Debug)]
pub struct IterationMatrixReport {
    pub sigma: f64,
    pub rho: f64,
    pub n_subsets: usize,
    pub spectral_radius_exact: f64,
    pub spectral_radius_first_order: f64,
    pub eigenvalues_exact: Vec<Complex<f64>>,
    pub eigenvalues_first_order: Vec<Complex<f64>>,
}

impl IterationMatrixReport {
    /// One line per eigenvalue: `matrix,index,re,im,modulus`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("matrix,index,re,im,modulus\n");
        for (name, ev) in [("exact", &self.eigenvalues_exact), ("first_order", &self.eigenvalues_first_order)] {
            for (k, z) in ev.iter().enumerate() {
                out.push_str(&format!("{name},{k},{:.17e},{:.17e},{:.17e}\n", z.re, z.im, z.norm()));
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "sigma = {:e}\nrho = {}\nN = {}\nmatrix size = {}\nspectral radius (exact) = {:.15}\nspectral radius (first order) = {:.15}\n",
            self.sigma,
            self.rho,
            self.n_subsets,
            self.eigenvalues_exact.len(),
            self.spectral_radius_exact,
            self.spectral_radius_first_order,
        )
    }
}

pub fn assemble_iteration_matrices(
    problem: &Problem,
    n_subsets: usize,
    sigma: f64,
    rho: f64,
    beta: f64,
) -> Result<IterationMatrixReport> {
    let dim = 2 * n_subsets * problem.n_pixels();
    if dim > ITERATION_MATRIX_LIMIT {
        return Err(Error::TooLarge {
            size: dim,
            limit: ITERATION_MATRIX_LIMIT,
        });
    }
    let agents = DenseAgents::new(problem, n_subsets, beta)?;
    let exact = exact_iteration(&agents, sigma, rho)?;
    let first = first_order_matrix(&agents, sigma, rho)?;
    let eigenvalues_exact = eigenvalues(&exact.matrix);
    let eigenvalues_first_order = eigenvalues(&first);
    Ok(IterationMatrixReport {
        sigma,
        rho,
        n_subsets,
        spectral_radius_exact: spectral_radius(&eigenvalues_exact),
        spectral_radius_first_order: spectral_radius(&eigenvalues_first_order),
        eigenvalues_exact,
        eigenvalues_first_order,
    })
}

pub const SERIAL_PNP_MAX_ITERS: usize = 200_000;

/// Serial plug-and-play: two agents, the full-data proximal map
/// `F(.; sigma)` and the denoiser `H`, balanced by Douglas-Rachford
/// (Mann with weight 1/2) until `F(x - a) = x` and `H(x + a) = x` hold to
/// relative residual `tol`.
pub fn serial_pnp_oracle(
    problem: &Problem,
    denoiser: &dyn Denoiser,
    sigma: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let views: Vec<usize> = (0..problem.n_views()).collect();
    let (h, b) = data_normal_equations(problem, &views)?;
    let prox = ProxFactor::new(&h, &b, sigma)?;
    let n = problem.n_pixels();
    let (mut w1, mut w2) = (vec![0.0; n], vec![0.0; n]);
    let mut residual = f64::INFINITY;
    let mut x = vec![0.0; n];
    for _ in 0..SERIAL_PNP_MAX_ITERS {
        for s in 0..n {
            x[s] = 0.5 * (w1[s] + w2[s]);
        }
        let v1: Vec<f64> = x.iter().zip(&w1).map(|(m, w)| 2.0 * m - w).collect();
        let v2: Vec<f64> = x.iter().zip(&w2).map(|(m, w)| 2.0 * m - w).collect();
        let z1 = prox.apply(&v1)?;
        let z2 = denoiser.denoise(&v2)?;
        let xn = norm(&x);
        if xn > 0.0 {
            let d1: Vec<f64> = z1.iter().zip(&x).map(|(a, b)| a - b).collect();
            let d2: Vec<f64> = z2.iter().zip(&x).map(|(a, b)| a - b).collect();
            residual = norm(&d1).max(norm(&d2)) / xn;
            if residual < tol {
                return Ok(x);
            }
        }
        for s in 0..n {
            w1[s] = 0.5 * (2.0 * z1[s] - v1[s]) + 0.5 * w1[s];
            w2[s] = 0.5 * (2.0 * z2[s] - v2[s]) + 0.5 * w2[s];
        }
    }
    Err(Error::NotConverged {
        solver: "serial_pnp_oracle",
        iterations: SERIAL_PNP_MAX_ITERS,
        last_update: residual,
        last_iterate: x,
    })
}

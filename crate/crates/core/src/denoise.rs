//! Image denoisers used as plug-and-play priors.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::models::Neighborhood;

/// Images up to this many pixels use a cached dense factorization; larger
/// ones are solved by conjugate gradients.
pub const DENSE_PIXEL_LIMIT: usize = 1024;
const CG_TOL: f64 = 1e-10;
const CG_MAX_ITERS: usize = 10_000;

/// Any image-to-image map standing in for a prior's proximal operator.
pub trait Denoiser: Send + Sync + fmt::Debug {
    fn denoise(&self, v: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DenoiserSpec {
    Identity,
    /// `argmin_z strength/2 |D z|^2 + 1/2 |z - v|^2` over weighted
    /// 8-neighbour differences. Firmly non-expansive.
    QuadraticProx { strength: f64 },
    /// Window mean of radius `radius`, clipped at the border. Not firmly
    /// non-expansive in general.
    Boxcar { radius: usize },
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::QuadraticProx { strength } if !(strength >= 0.0 && strength.is_finite()) => {
                Err(Error::InvalidParameter("denoiser strength must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, side: usize) -> Result<Box<dyn Denoiser>> {
        self.validate()?;
        Ok(match *self {
            DenoiserSpec::Identity => Box::new(IdentityDenoiser),
            DenoiserSpec::QuadraticProx { strength } => Box::new(QuadraticProx::new(side, strength)),
            DenoiserSpec::Boxcar { radius } => Box::new(Boxcar { side, radius }),
        })
    }
}

/// One-shot application of a denoiser described by `spec`.
pub fn denoise(spec: &DenoiserSpec, side: usize, v: &[f64]) -> Result<Vec<f64>> {
    spec.build(side)?.denoise(v)
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }
}

pub struct QuadraticProx {
    side: usize,
    strength: f64,
    factor: OnceLock<Option<Cholesky<f64, Dyn>>>,
}

impl fmt::Debug for QuadraticProx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticProx")
            .field("side", &self.side)
            .field("strength", &self.strength)
            .finish()
    }
}

impl QuadraticProx {
    pub fn new(side: usize, strength: f64) -> Self {
        QuadraticProx {
            side,
            strength,
            factor: OnceLock::new(),
        }
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// `(I + strength L) z` for the weighted Laplacian `L = D'D`.
    fn apply_system(&self, nb: &Neighborhood, z: &[f64]) -> Vec<f64> {
        let lz = nb.laplacian_apply(z);
        z.iter().zip(lz).map(|(a, b)| a + self.strength * b).collect()
    }

    fn dense_factor(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.factor
            .get_or_init(|| {
                let nb = Neighborhood::new(self.side);
                let n = self.side * self.side;
                let mut m = DMatrix::<f64>::identity(n, n);
                for (s, r, w) in nb.pairs() {
                    let c = self.strength * w;
                    m[(s, s)] += c;
                    m[(r, r)] += c;
                    m[(s, r)] -= c;
                    m[(r, s)] -= c;
                }
                m.cholesky()
            })
            .as_ref()
    }

    fn conjugate_gradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        let nb = Neighborhood::new(self.side);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut z = v.to_vec();
        let az = self.apply_system(&nb, &z);
        let mut r: Vec<f64> = v.iter().zip(az).map(|(a, b)| a - b).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let target = CG_TOL * CG_TOL * dot(v, v).max(f64::MIN_POSITIVE);
        for _ in 0..CG_MAX_ITERS {
            if rr <= target {
                return Ok(z);
            }
            let ap = self.apply_system(&nb, &p);
            let step = rr / dot(&p, &ap);
            for ((zi, ri), (pi, api)) in z.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
                *zi += step * pi;
                *ri -= step * api;
            }
            let rr_new = dot(&r, &r);
            let ratio = rr_new / rr;
            rr = rr_new;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + ratio * *pi;
            }
        }
        Err(Error::NotConverged {
            solver: "quadratic-prox denoiser",
            iterations: CG_MAX_ITERS,
            last_update: (rr / dot(v, v)).sqrt(),
            last_iterate: z,
        })
    }
}

impl Denoiser for QuadraticProx {
    fn denoise(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.side * self.side, v.len(), "denoiser input")?;
        if self.strength == 0.0 {
            return Ok(v.to_vec());
        }
        if v.len() <= DENSE_PIXEL_LIMIT {
            let chol = self.dense_factor().ok_or(Error::Singular("quadratic-prox denoiser"))?;
            Ok(chol.solve(&DVector::from_column_slice(v)).as_slice().to_vec())
        } else {
            self.conjugate_gradient(v)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Boxcar {
    side: usize,
    radius: usize,
}

impl Denoiser for Boxcar {
    fn denoise(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.side;
        check_len(n * n, v.len(), "denoiser input")?;
        let r = self.radius;
        let mut out = vec![0.0; v.len()];
        for row in 0..n {
            for col in 0..n {
                let (r0, r1) = (row.saturating_sub(r), (row + r).min(n - 1));
                let (c0, c1) = (col.saturating_sub(r), (col + r).min(n - 1));
                let mut sum = 0.0;
                for rr in r0..=r1 {
                    sum += v[rr * n + c0..=rr * n + c1].iter().sum::<f64>();
                }
                out[row * n + col] = sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            }
        }
        Ok(out)
    }
}

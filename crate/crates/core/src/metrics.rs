//! Convergence metrics: NRMSE, equits and algorithmic speedup.

use crate::error::{check_len, Error, Result};

/// `|x - x_ref| / |x_ref|`.
pub fn nrmse(x: &[f64], x_ref: &[f64]) -> Result<f64> {
    check_len(x_ref.len(), x.len(), "nrmse operands")?;
    let denom = norm(x_ref);
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("nrmse reference"));
    }
    let num: f64 = x
        .iter()
        .zip(x_ref)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Voxel updates normalized by `roi_voxels * view_subsets`.
pub fn equits(voxel_updates: u64, roi_voxels: usize, view_subsets: usize) -> Result<f64> {
    let denom = roi_voxels * view_subsets;
    if denom == 0 {
        return Err(Error::ZeroDenominator("equits"));
    }
    Ok(voxel_updates as f64 / denom as f64)
}

/// `N * equits_central / equits_mace`.
pub fn speedup(equits_central: f64, equits_mace: f64, n_subsets: usize) -> Result<f64> {
    if equits_mace == 0.0 {
        return Err(Error::ZeroDenominator("speedup"));
    }
    Ok(n_subsets as f64 * equits_central / equits_mace)
}

#![allow(dead_code)]

use mace_core::geometry::{build_system_matrix, Geometry};
use mace_core::image::{Sinogram, SinogramSet};
use mace_core::models::{PriorParams, Problem, WeightModel};
use mace_core::phantom::{make_phantom, PhantomKind};
use mace_core::sim::simulate_sinogram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small problem with random positive data and weights.
pub fn random_problem(seed: u64, side: usize, n_views: usize, beta: f64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ch = 2 * side;
    let geom = Geometry::new(side, 1.0, n_views, n_ch, 0.75).unwrap();
    let a = build_system_matrix(&geom).unwrap();
    let m = n_views * n_ch;
    let data = SinogramSet::new(
        Sinogram::from_vec(n_views, n_ch, (0..m).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap(),
        Sinogram::from_vec(n_views, n_ch, (0..m).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap(),
    )
    .unwrap();
    Problem::new(side, a, data, PriorParams::quadratic(beta)).unwrap()
}

/// Simulated ellipse-phantom problem at the given size.
pub fn phantom_problem(side: usize, n_views: usize, beta: f64, seed: u64) -> (Problem, Vec<f64>) {
    let geom = Geometry::new(side, 1.0, n_views, 3 * side, 0.5).unwrap();
    let a = build_system_matrix(&geom).unwrap();
    let ph = make_phantom(PhantomKind::Ellipses { symmetric: false }, &geom).unwrap();
    let data = simulate_sinogram(&ph.data, &a, seed, 1e4, WeightModel::Transmission).unwrap();
    (Problem::new(side, a, data, PriorParams::quadratic(beta)).unwrap(), ph.data)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

mod common;

use common::{random_problem, random_vec, rel_diff};
use mace_core::consensus::{mace_solve, MaceConfig, RunOptions};
use mace_core::geometry::{build_system_matrix, forward_project, partition_views, Geometry, SparseViewMatrix};
use mace_core::icd::{icd_map_solve, AgentWorkspace};
use mace_core::image::SinogramSet;
use mace_core::metrics::norm;
use mace_core::models::{PriorParams, Problem};
use mace_core::oracle::{
    assemble_iteration_matrices, dense_map_oracle, exact_iteration, exact_step, DenseAgents,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn icd_map_matches_dense_solve_on_random_instances() {
    for seed in 0..20 {
        let prob = random_problem(seed, 6, 10, 0.5);
        let dense = dense_map_oracle(&prob, 0.5).unwrap();
        let icd = icd_map_solve(&prob, 0.5, 1e-12).unwrap();
        assert!(rel_diff(&icd.image, &dense) < 1e-7, "seed {seed}");
    }
}

#[test]
fn icd_map_inverts_a_square_system() {
    let a = vec![
        SparseViewMatrix { view_index: 0, rows: vec![vec![(0, 1.0), (1, 0.5)]] },
        SparseViewMatrix { view_index: 1, rows: vec![vec![(1, 2.0), (2, 0.25)]] },
        SparseViewMatrix { view_index: 2, rows: vec![vec![(2, 1.0)]] },
        SparseViewMatrix { view_index: 3, rows: vec![vec![(0, 0.3), (3, 4.0)]] },
    ];
    let x_true = [0.3, -1.2, 2.0, 0.125];
    let y = forward_project(&a, &x_true).unwrap();
    let prob = Problem::new(2, a, SinogramSet::unweighted(y), PriorParams::quadratic(0.0)).unwrap();
    let dense = dense_map_oracle(&prob, 0.0).unwrap();
    let icd = icd_map_solve(&prob, 0.0, 1e-12).unwrap();
    assert!(rel_diff(&icd.image, &dense) < 1e-6);
    assert!(rel_diff(&icd.image, &x_true) < 1e-6);
}

#[test]
fn icd_map_recovers_noise_free_object() {
    let geom = Geometry::new(4, 1.0, 12, 9, 0.6).unwrap();
    let a = build_system_matrix(&geom).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x_true = random_vec(&mut rng, 16, 1.0);
    let y = forward_project(&a, &x_true).unwrap();
    let prob = Problem::new(4, a, SinogramSet::unweighted(y), PriorParams::quadratic(0.0)).unwrap();
    let icd = icd_map_solve(&prob, 0.0, 1e-13).unwrap();
    assert!(rel_diff(&icd.image, &x_true) < 1e-6);
}

#[test]
fn prox_solve_matches_dense_prox() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..20 {
        let prob = random_problem(100 + seed, 5, 8, 1.5);
        let n_subsets = 1 + (seed as usize % 4);
        let agents = DenseAgents::new(&prob, n_subsets, 1.5).unwrap();
        let subsets = partition_views(8, n_subsets).unwrap();
        let i = seed as usize % n_subsets;
        let sigma = 0.4;
        let v = random_vec(&mut rng, 25, 1.0);
        let mut ws = AgentWorkspace::new(&prob, subsets[i].clone(), n_subsets, sigma, 1.5).unwrap();
        let z = ws.prox_solve(&v, 1e-12).unwrap();
        let dense = agents.prox(i, &v, sigma).unwrap();
        assert!(rel_diff(&z, &dense) < 1e-7, "seed {seed}");

        // first-order optimality at tol 1e-9
        let mut ws = AgentWorkspace::new(&prob, subsets[i].clone(), n_subsets, sigma, 1.5).unwrap();
        let tol = 1e-9;
        let z = ws.prox_solve(&v, tol).unwrap();
        let g = agents.gradient(i, &z);
        let opt: Vec<f64> = g.iter().zip(z.iter().zip(&v)).map(|(g, (z, v))| g + (z - v) / (sigma * sigma)).collect();
        assert!(norm(&opt) <= 10.0 * tol * norm(&v) / (sigma * sigma));
    }
}

#[test]
fn prox_with_huge_sigma_minimizes_local_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prob = random_problem(9, 4, 8, 4.0);
    let agents = DenseAgents::new(&prob, 2, 4.0).unwrap();
    let h = agents.hessians[1].clone();
    let unconstrained = h.lu().solve(&agents.rhs[1]).unwrap();
    let subsets = partition_views(8, 2).unwrap();
    let mut ws = AgentWorkspace::new(&prob, subsets[1].clone(), 2, 1e6, 4.0).unwrap();
    let z = ws.prox_solve(&random_vec(&mut rng, 16, 1.0), 1e-12).unwrap();
    assert!(rel_diff(&z, unconstrained.as_slice()) < 1e-3);
}

fn agent_at(prob: &Problem, n_subsets: usize, i: usize, sigma: f64, beta: f64, x: &[f64]) -> AgentWorkspace {
    let subsets = partition_views(prob.n_views(), n_subsets).unwrap();
    let mut ws = AgentWorkspace::new(prob, subsets[i].clone(), n_subsets, sigma, beta).unwrap();
    ws.set_state(x).unwrap();
    ws
}

#[test]
fn partial_update_fixed_point_iff_prox() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for seed in 0..20 {
        let prob = random_problem(200 + seed, 5, 8, 1.0);
        let (n_subsets, i, sigma) = (2, seed as usize % 2, 0.3);
        let agents = DenseAgents::new(&prob, n_subsets, 1.0).unwrap();
        let v = random_vec(&mut rng, 25, 1.0);
        let x = agents.prox(i, &v, sigma).unwrap();
        let mut ws = agent_at(&prob, n_subsets, i, sigma, 1.0, &x);
        let out = ws.partial_update_prox(&v).unwrap().to_vec();
        assert!(rel_diff(&out, &x) < 1e-9, "seed {seed}");

        let perturbed: Vec<f64> = x.iter().zip(random_vec(&mut rng, 25, 1e-3)).map(|(a, e)| a + e).collect();
        let mut ws = agent_at(&prob, n_subsets, i, sigma, 1.0, &perturbed);
        let out = ws.partial_update_prox(&v).unwrap().to_vec();
        let d: Vec<f64> = out.iter().zip(&perturbed).map(|(a, b)| a - b).collect();
        assert!(norm(&d) > 1e-6, "seed {seed}");
    }
}

#[test]
fn partial_update_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (seed, side) in [(1, 3), (2, 4), (3, 5), (4, 6), (5, 7), (6, 8)] {
        for n_subsets in [1, 3] {
            let prob = random_problem(seed, side, 9, 0.7);
            let n = side * side;
            let agents = DenseAgents::new(&prob, n_subsets, 0.7).unwrap();
            let sigma = 0.5;
            for i in 0..n_subsets {
                let x = random_vec(&mut rng, n, 1.0);
                let v = random_vec(&mut rng, n, 1.0);
                let closed = agents.partial_update(i, &v, &x, sigma);
                let mut ws = agent_at(&prob, n_subsets, i, sigma, 0.7, &x);
                let out = ws.partial_update_prox(&v).unwrap();
                assert!(rel_diff(out, &closed) < 1e-8);
            }
        }
    }
}

#[test]
fn spectral_radius_below_one_for_small_sigma() {
    let prob = random_problem(77, 4, 8, 1.0);
    for rho in [0.5, 0.8] {
        for sigma in [1e-1, 1e-2, 1e-3] {
            let r = assemble_iteration_matrices(&prob, 2, sigma, rho, 1.0).unwrap();
            println!(
                "sigma {sigma:e} rho {rho}: exact {:.6} first order {:.6}",
                r.spectral_radius_exact, r.spectral_radius_first_order
            );
            assert_eq!(r.eigenvalues_exact.len(), 2 * 2 * 16);
            if sigma == 1e-3 {
                assert!(r.spectral_radius_exact < 1.0);
                assert!(r.spectral_radius_first_order < 1.0);
            }
        }
    }
}

#[test]
fn affine_iteration_and_mace_share_the_fixed_point() {
    let prob = random_problem(31, 4, 8, 1.0);
    let (sigma, rho, beta) = (0.2, 0.8, 1.0);
    let agents = DenseAgents::new(&prob, 2, beta).unwrap();
    let it = exact_iteration(&agents, sigma, rho).unwrap();

    // matrix-power iteration from a random start
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut z = DVector::from_vec(random_vec(&mut rng, 64, 1.0));
    for _ in 0..20_000 {
        z = it.apply(&z);
    }
    let direct = it.fixed_point().unwrap();
    assert!((&z - &direct).norm() <= 1e-8 * direct.norm());

    let mut cfg = MaceConfig::conventional(2, sigma, beta);
    cfg.rho = rho;
    cfg.tol = 1e-13;
    cfg.max_outer = 20_000;
    let out = mace_solve(&prob, &cfg, &RunOptions::default()).unwrap();
    let w: Vec<f64> = out.w.components.concat();
    assert!(rel_diff(&w, &direct.as_slice()[..32]) < 1e-8);

    // (2F - I)(2G - I) w* = w* with the dense prox
    let mean: Vec<f64> = (0..16).map(|s| 0.5 * (w[s] + w[16 + s])).collect();
    let mut tw = Vec::new();
    for i in 0..2 {
        let v: Vec<f64> = (0..16).map(|s| 2.0 * mean[s] - w[16 * i + s]).collect();
        let f = agents.prox(i, &v, sigma).unwrap();
        tw.extend((0..16).map(|s| 2.0 * f[s] - v[s]));
    }
    assert!(rel_diff(&tw, &w) < 1e-8);

    // consensus equals the MAP solution
    let x = dense_map_oracle(&prob, beta).unwrap();
    assert!(rel_diff(&out.image, &x) < 1e-8);
    // exact_step is what the matrix encodes
    let step = exact_step(&agents, direct.as_slice(), sigma, rho);
    assert!(rel_diff(&step, direct.as_slice()) < 1e-10);
}

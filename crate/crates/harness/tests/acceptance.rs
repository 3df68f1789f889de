//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use mace_core::consensus::{
    mace_pnp_solve, mace_solve, MaceConfig, MaceOutcome, RunOptions, Schedule, StackedState,
};
use mace_core::denoise::{DenoiserSpec, QuadraticProx};
use mace_core::geometry::{build_system_matrix, Geometry};
use mace_core::icd::AgentWorkspace;
use mace_core::image::{Sinogram, SinogramSet};
use mace_core::metrics::nrmse;
use mace_core::models::{PriorParams, Problem};
use mace_core::oracle::{
    assemble_iteration_matrices, dense_composite_oracle, dense_map_oracle, serial_pnp_oracle, DenseAgents,
};
use mace_harness::run::{memory_report, prepare, reconstruct, sweep, SweepStatus};
use mace_harness::RunConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIGMA: f64 = 2e-4;
const BETA: f64 = 1e4;
const PNP_STRENGTH: f64 = 4e-4;

/// The 32x32 ellipse problem: 64 views, 96 channels.
fn base_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mace.sigma = Some(SIGMA);
    cfg.mace.max_outer = 40_000;
    cfg.mace.tol = 1e-9;
    cfg.prior.beta = BETA;
    cfg
}

fn base_problem() -> Problem {
    prepare(&base_config()).unwrap().problem
}

fn conventional(n: usize, rho: f64) -> MaceConfig {
    let mut c = MaceConfig::conventional(n, SIGMA, BETA);
    c.rho = rho;
    c.tol = 1e-9;
    c.max_outer = 40_000;
    c
}

fn random_problem(rng: &mut ChaCha8Rng, side: usize, n_views: usize, beta: f64) -> Problem {
    let n_ch = 2 * side;
    let geom = Geometry::new(side, 1.0, n_views, n_ch, 0.75).unwrap();
    let a = build_system_matrix(&geom).unwrap();
    let m = n_views * n_ch;
    let data: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
    let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let sino = SinogramSet::new(
        Sinogram::from_vec(n_views, n_ch, data).unwrap(),
        Sinogram::from_vec(n_views, n_ch, weights).unwrap(),
    )
    .unwrap();
    Problem::new(side, a, sino, PriorParams::quadratic(beta)).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_stack(rng: &mut ChaCha8Rng, n_agents: usize, n: usize) -> StackedState {
    StackedState::new((0..n_agents).map(|_| random_vec(rng, n, 1.0)).collect()).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    nrmse(a, b).unwrap()
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Runs shared by criteria 1, 2 and 9.
struct ConventionalRuns {
    oracle: Vec<f64>,
    /// `(N, outcome, seconds)`
    runs: Vec<(usize, MaceOutcome, f64)>,
}

fn conventional_runs(problem: &Problem) -> ConventionalRuns {
    let oracle = dense_map_oracle(problem, BETA).unwrap();
    let runs = [1, 2, 4, 8]
        .into_iter()
        .map(|n| {
            let t = Instant::now();
            let out = mace_solve(problem, &conventional(n, 0.8), &RunOptions::default()).unwrap();
            (n, out, t.elapsed().as_secs_f64())
        })
        .collect();
    ConventionalRuns { oracle, runs }
}

fn exactness(c: &ConventionalRuns) -> Verdict {
    let (_, out, secs) = c.runs.iter().find(|r| r.0 == 4).unwrap();
    let relnorm = out.log.last().unwrap().mann_update_relnorm;
    let err = rel(&out.image, &c.oracle);
    verdict(
        relnorm < 1e-9 && err < 1e-6 && *secs < 60.0,
        format!("N=4: relnorm {relnorm:.2e}, nrmse {err:.2e}, {secs:.1} s"),
    )
}

fn partition_invariance(c: &ConventionalRuns) -> Verdict {
    let errs: Vec<(usize, f64)> = c.runs.iter().map(|(n, o, _)| (*n, rel(&o.image, &c.oracle))).collect();
    let detail = errs.iter().map(|(n, e)| format!("N={n}: {e:.2e}")).collect::<Vec<_>>().join(", ");
    verdict(errs.iter().all(|&(_, e)| e < 1e-6), detail)
}

fn spectral() -> Verdict {
    let problem = {
        let mut cfg = base_config();
        cfg.geometry.n_side = 4;
        cfg.geometry.n_views = 8;
        cfg.geometry.n_channels = 12;
        prepare(&cfg).unwrap().problem
    };
    let stable = assemble_iteration_matrices(&problem, 2, 1e-3, 0.8, BETA).unwrap();
    let tiny = assemble_iteration_matrices(&problem, 2, 1e-6, 0.8, BETA).unwrap();
    let target = 1.0 - 2.0 * 0.8;
    let closest = tiny
        .eigenvalues_first_order
        .iter()
        .map(|z| ((z.re - target).powi(2) + z.im.powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min);
    verdict(
        stable.spectral_radius_exact < 1.0 && stable.spectral_radius_first_order < 1.0 && closest < 1e-3,
        format!(
            "sigma=1e-3: radius exact {:.6}, first-order {:.6}; sigma=1e-6: nearest to -0.6 at {closest:.1e}",
            stable.spectral_radius_exact, stable.spectral_radius_first_order
        ),
    )
}

fn partial_update_fixed_point() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let (mut worst_fixed, mut least_moved) = (0.0f64, f64::INFINITY);
    let instances = 24;
    for k in 0..instances {
        let side = 3 + k % 5;
        let n_subsets = 1 + k % 3;
        let beta = rng.random_range(0.1..5.0);
        let sigma = rng.random_range(0.2..2.0);
        let problem = random_problem(&mut rng, side, 6, beta);
        let agents = DenseAgents::new(&problem, n_subsets, beta).unwrap();
        let i = k % n_subsets;
        let n = problem.n_pixels();
        let v = random_vec(&mut rng, n, 2.0);
        let x = agents.prox(i, &v, sigma).unwrap();
        let subset = agents.subsets[i].clone();

        let mut ws = AgentWorkspace::new(&problem, subset.clone(), n_subsets, sigma, beta).unwrap();
        ws.set_state(&x).unwrap();
        let z = ws.partial_update_prox(&v).unwrap().to_vec();
        worst_fixed = worst_fixed.max(rel(&z, &x));

        let noise = random_vec(&mut rng, n, 1e-3);
        let xp: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let mut ws = AgentWorkspace::new(&problem, subset, n_subsets, sigma, beta).unwrap();
        ws.set_state(&xp).unwrap();
        let z = ws.partial_update_prox(&v).unwrap().to_vec();
        least_moved = least_moved.min(rel(&z, &xp));
    }
    verdict(
        worst_fixed <= 1e-9 && least_moved > 1e-6,
        format!("{instances} instances: at prox {worst_fixed:.1e}, perturbed {least_moved:.1e}"),
    )
}

fn closed_form() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for side in 2..=8 {
        for n_subsets in [1, 2, 3] {
            let beta = rng.random_range(0.0..3.0);
            let sigma = rng.random_range(0.1..3.0);
            let problem = random_problem(&mut rng, side, 6, beta);
            let agents = DenseAgents::new(&problem, n_subsets, beta).unwrap();
            let n = problem.n_pixels();
            for i in 0..n_subsets {
                let v = random_vec(&mut rng, n, 2.0);
                let x = random_vec(&mut rng, n, 2.0);
                // H = L~ + L' with L~ lower triangular including the diagonal.
                let h = &agents.hessians[i];
                let inv = 1.0 / (sigma * sigma);
                let lower = DMatrix::from_fn(n, n, |r, c| if c <= r { h[(r, c)] } else { 0.0 })
                    + DMatrix::identity(n, n) * inv;
                let strict_upper = DMatrix::from_fn(n, n, |r, c| if c > r { h[(r, c)] } else { 0.0 });
                let rhs = strict_upper * DVector::from_column_slice(&x)
                    - &agents.rhs[i]
                    - DVector::from_column_slice(&v) * inv;
                let expected = -lower.solve_lower_triangular(&rhs).unwrap();

                let mut ws = AgentWorkspace::new(&problem, agents.subsets[i].clone(), n_subsets, sigma, beta).unwrap();
                ws.set_state(&x).unwrap();
                let z = ws.partial_update_prox(&v).unwrap();
                worst = worst.max(rel(z, expected.as_slice()));
                instances += 1;
            }
        }
    }
    verdict(worst <= 1e-8, format!("{instances} instances with n <= 64: worst {worst:.1e}"))
}

fn self_inverse() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let s = random_stack(&mut rng, 1 + k % 8, 1 + (k * 7) % 50);
        let back = s.reflect_g().reflect_g();
        for (a, b) in back.components.iter().flatten().zip(s.components.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-12, format!("100 stacks: max deviation {worst:.1e}"))
}

struct PnpRun {
    outcome: MaceOutcome,
}

fn pnp_run(problem: &Problem) -> PnpRun {
    let mut c = MaceConfig::pnp(4, SIGMA, DenoiserSpec::QuadraticProx { strength: PNP_STRENGTH });
    c.tol = 1e-10;
    c.max_outer = 40_000;
    PnpRun {
        outcome: mace_pnp_solve(problem, &c, &RunOptions::default()).unwrap(),
    }
}

fn pnp_equivalence(problem: &Problem, run: &PnpRun) -> Verdict {
    let h = QuadraticProx::new(problem.side, PNP_STRENGTH);
    let serial = serial_pnp_oracle(problem, &h, SIGMA, 1e-10).unwrap();
    let dense = dense_composite_oracle(problem, PNP_STRENGTH, SIGMA).unwrap();
    let m = &run.outcome.image;
    let (a, b, c) = (rel(m, &dense), rel(&serial, &dense), rel(m, &serial));
    verdict(
        a < 1e-5 && b < 1e-5 && c < 1e-5,
        format!("mace-dense {a:.1e}, serial-dense {b:.1e}, mace-serial {c:.1e}"),
    )
}

fn nonexpansive() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let problem = random_problem(&mut rng, 10, 12, 0.0);
    let (n_agents, sigma) = (4, 0.3);
    let agent_sigma = sigma * (n_agents as f64).sqrt();
    let agents = DenseAgents::new(&problem, n_agents, 0.0).unwrap();
    let factors: Vec<_> = (0..n_agents).map(|i| agents.prox_factor(i, agent_sigma).unwrap()).collect();
    let h = QuadraticProx::new(problem.side, 1.5);
    let t_h = |w: &StackedState| -> StackedState {
        let v = w.reflect_gh(&h).unwrap();
        let out = v
            .components
            .iter()
            .zip(&factors)
            .map(|(vi, f)| {
                let x = f.apply(vi).unwrap();
                x.iter().zip(vi).map(|(a, b)| 2.0 * a - b).collect()
            })
            .collect();
        StackedState::new(out).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_stack(&mut rng, n_agents, problem.n_pixels());
        let b = random_stack(&mut rng, n_agents, problem.n_pixels());
        worst = worst.max(t_h(&a).distance(&t_h(&b)) / a.distance(&b));
    }
    verdict(worst <= 1.0 + 1e-9, format!("50 pairs: worst ratio {worst:.12}"))
}

fn residuals(c: &ConventionalRuns, pnp: &PnpRun) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let all = c.runs.iter().map(|(n, o, _)| (format!("N={n}"), o)).chain([("pnp".to_string(), &pnp.outcome)]);
    for (name, o) in all {
        let r = &o.residuals;
        ok &= r.r_f < 1e-6 && r.r_u <= 1e-12;
        parts.push(format!("{name}: r_F {:.1e} r_u {:.1e}", r.r_f, r.r_u));
    }
    verdict(ok, parts.join("; "))
}

fn rho_trend() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.io.output_dir = dir.path().to_path_buf();
    cfg.experiment.rho_values = vec![0.5, 0.8];
    cfg.experiment.n_values = vec![1, 2, 4, 8];
    cfg.experiment.target_nrmse = 1e-4;
    let table = sweep(&cfg).unwrap();
    let at = |n: usize, rho: f64| {
        table
            .rows
            .iter()
            .find(|r| r.n_subsets == n && r.rho == rho && r.status == SweepStatus::Reached)
            .and_then(|r| r.equits_to_target)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [1, 2, 4, 8] {
        let (slow, fast) = (at(n, 0.5), at(n, 0.8));
        ok &= matches!((slow, fast), (Some(s), Some(f)) if f <= s);
        parts.push(format!(
            "N={n}: {}/{}",
            fast.map_or("-".into(), |e| format!("{e}")),
            slow.map_or("-".into(), |e| format!("{e}"))
        ));
    }
    verdict(ok, format!("equits rho=0.8/rho=0.5 {}", parts.join(", ")))
}

fn memory(problem: &Problem) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [2, 4, 8, 16] {
        let r = memory_report(problem, n).unwrap();
        ok &= r.within_bound();
        parts.push(format!("N={n}: max {} <= {:.0}", r.nnz_per_agent.iter().max().unwrap(), r.bound()));
    }
    verdict(ok, parts.join(", "))
}

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let layouts = [(1, Schedule::RoundRobin), (4, Schedule::Blocked), (3, Schedule::Reversed)];
    let mut bytes = Vec::new();
    for (dir, (workers, schedule)) in dirs.iter().zip(layouts) {
        let mut cfg = base_config();
        cfg.mace.tol = 1e-7;
        cfg.mace.workers = workers;
        cfg.mace.schedule = schedule;
        cfg.io.output_dir = dir.path().to_path_buf();
        let s = reconstruct(&cfg).unwrap();
        let file = std::fs::read(dir.path().join("reconstruction.img")).unwrap();
        bytes.push((s.image.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), file));
    }
    let same = bytes.windows(2).all(|p| p[0] == p[1]);
    verdict(same, "workers 1/4/3 with round-robin/blocked/reversed schedules".into())
}

fn main() -> ExitCode {
    let problem = base_problem();
    let runs = conventional_runs(&problem);
    let pnp = pnp_run(&problem);
    let criteria: Vec<Check> = vec![
        ("exactness", Box::new(|| exactness(&runs))),
        ("partition invariance", Box::new(|| partition_invariance(&runs))),
        ("spectral check", Box::new(spectral)),
        ("fixed-point equivalence", Box::new(partial_update_fixed_point)),
        ("closed-form partial update", Box::new(closed_form)),
        ("self-inverse reflection", Box::new(self_inverse)),
        ("plug-and-play equivalence", Box::new(|| pnp_equivalence(&problem, &pnp))),
        ("non-expansiveness", Box::new(nonexpansive)),
        ("consensus residuals", Box::new(|| residuals(&runs, &pnp))),
        ("rho trend", Box::new(rho_trend)),
        ("memory scaling", Box::new(|| memory(&problem))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} criterion {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
    }
    let trend: Vec<String> = runs.runs.iter().map(|(n, o, _)| format!("N={n}: {} equits", o.equits)).collect();
    println!("note: equits to relnorm 1e-9 by N: {}", trend.join(", "));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

//! Release gates for the solver, one test per criterion.
//!
//! Each test prints a single `ACCEPTANCE <n> <name>: PASS/FAIL - <detail>`
//! line, so the whole gate reads off one run of
//! `cargo test -p decpomdp --test acceptance -- --nocapture`.
//!
//! Benchmark solves are shared between gates through lazy fixtures; every
//! fixture records its wall-clock time and the full per-iteration logs so the
//! timing and monotonicity gates can audit them.

mod common;

use common::{
    dense_kernel, dense_messages, dense_update, load_bench, max_abs_diff, plant_policy_zeros,
    random_sparse_model, report, toy_pomdp, ControllerEm,
};
use decpomdp::controller::init_random;
use decpomdp::em::{
    build_messages, hard_cap, m_step, solve_restarts, value_from_likelihood, CutoffMode, EmConfig,
    JointKernel, SolveOutcome,
};
use decpomdp::evaluation::{evaluate_exact, simulate};
use decpomdp::model::DecPomdpModel;
use once_cell::sync::Lazy;
use std::time::Instant;

/// Reference value for the box-pushing instance: best of 10 restarts at two
/// nodes per agent with seed 7 and the default solver configuration, recorded
/// when the instance was created. The gate allows 5% drift.
const BOX_GOLDEN: f64 = 114.364787;

/// Protocol for the rover instance (large: 256 states). The iteration budget
/// is capped at 400 because the slowest restarts keep polishing the same
/// plateau for hundreds more iterations without changing which restart wins;
/// the cap keeps the full 10-restart sweep under four minutes.
const ROVERS_NODES: usize = 3;
const ROVERS_RESTARTS: usize = 10;
const ROVERS_SEED: u64 = 7;
const ROVERS_MAX_ITERS: usize = 400;
const ROVERS_THRESHOLD: f64 = 9.0;

/// One benchmark solved at one controller size, with timing.
struct Solved {
    problem: &'static str,
    nodes: usize,
    model: DecPomdpModel,
    outcome: SolveOutcome,
    wall_s: f64,
}

impl Solved {
    fn best_value(&self) -> f64 {
        self.outcome.best_run().log.final_value_exact
    }
    fn best_likelihood(&self) -> f64 {
        self.outcome.best_run().log.final_likelihood
    }
}

fn solve_bench(problem: &'static str, nodes: usize, restarts: usize, seed: u64) -> Solved {
    solve_bench_cfg(problem, nodes, restarts, seed, &EmConfig::default())
}

fn solve_bench_cfg(
    problem: &'static str,
    nodes: usize,
    restarts: usize,
    seed: u64,
    cfg: &EmConfig,
) -> Solved {
    let model = load_bench(problem);
    let start = Instant::now();
    let outcome = solve_restarts(&model, nodes, nodes, restarts, seed, cfg)
        .unwrap_or_else(|e| panic!("solving {problem} at {nodes} nodes: {e}"));
    let wall_s = start.elapsed().as_secs_f64();
    Solved { problem, nodes, model, outcome, wall_s }
}

static BROADCAST: Lazy<Vec<Solved>> =
    Lazy::new(|| (1..=4).map(|n| solve_bench("broadcast", n, 10, 1)).collect());
static RECYCLING: Lazy<Vec<Solved>> =
    Lazy::new(|| (2..=4).map(|n| solve_bench("recycling", n, 10, 1)).collect());
static GRID: Lazy<Vec<Solved>> =
    Lazy::new(|| (2..=3).map(|n| solve_bench("grid_small", n, 10, 1)).collect());
static TIGER: Lazy<Solved> = Lazy::new(|| solve_bench("dectiger", 2, 10, 1));
static BOX_PUSHING: Lazy<Solved> = Lazy::new(|| solve_bench("box_pushing", 2, 10, 7));
static ROVERS: Lazy<Solved> = Lazy::new(|| {
    let cfg = EmConfig { max_iters: ROVERS_MAX_ITERS, ..EmConfig::default() };
    solve_bench_cfg("mars_rovers", ROVERS_NODES, ROVERS_RESTARTS, ROVERS_SEED, &cfg)
});

fn all_fixtures() -> Vec<&'static Solved> {
    let mut all: Vec<&'static Solved> = Vec::new();
    all.extend(BROADCAST.iter());
    all.extend(RECYCLING.iter());
    all.extend(GRID.iter());
    all.push(&TIGER);
    all.push(&BOX_PUSHING);
    all.push(&ROVERS);
    all
}

#[test]
fn acceptance_01_broadcast_values_and_runtime() {
    let mut detail = String::new();
    let mut pass = true;
    for s in BROADCAST.iter() {
        let v = s.best_value();
        pass &= v >= 9.0 && s.wall_s <= 10.0;
        detail.push_str(&format!("n={}: {:.3} in {:.1}s; ", s.nodes, v, s.wall_s));
    }
    report(1, "broadcast", pass, detail.trim_end_matches("; "));
}

#[test]
fn acceptance_02_recycling_values() {
    let mut detail = String::new();
    let mut pass = true;
    for s in RECYCLING.iter() {
        let v = s.best_value();
        pass &= v >= 58.9;
        detail.push_str(&format!("n={}: {:.3}; ", s.nodes, v));
    }
    report(2, "recycling", pass, detail.trim_end_matches("; "));
}

#[test]
fn acceptance_03_grid_values() {
    let mut detail = String::new();
    let mut pass = true;
    for s in GRID.iter() {
        let v = s.best_value();
        pass &= v >= 6.65;
        detail.push_str(&format!("n={}: {:.3}; ", s.nodes, v));
    }
    report(3, "grid_small", pass, detail.trim_end_matches("; "));
}

#[test]
fn acceptance_04_tiger_likelihood_plateau() {
    let lik = TIGER.best_likelihood();
    let v = TIGER.best_value();
    let pass = lik >= 0.80 && v >= -22.0;
    report(
        4,
        "dectiger",
        pass,
        &format!("best likelihood {:.4} (>= 0.80), value {:.3} (>= -22)", lik, v),
    );
}

#[test]
fn acceptance_05_rovers_value() {
    let v = ROVERS.best_value();
    let pass = v >= ROVERS_THRESHOLD;
    report(
        5,
        "mars_rovers",
        pass,
        &format!(
            "best {:.3} (>= {:.1}) at {} nodes, {} restarts, {:.0}s",
            v, ROVERS_THRESHOLD, ROVERS_NODES, ROVERS_RESTARTS, ROVERS.wall_s
        ),
    );
}

#[test]
fn acceptance_06_box_pushing_golden_and_monotone() {
    let v = BOX_PUSHING.best_value();
    let rel = (v - BOX_GOLDEN).abs() / BOX_GOLDEN.abs();
    let mut worst_drop = 0.0f64;
    for run in &BOX_PUSHING.outcome.runs {
        for w in run.log.records.windows(2) {
            worst_drop = worst_drop.max(w[0].likelihood - w[1].likelihood);
        }
    }
    let pass = rel <= 0.05 && worst_drop <= 1e-9;
    report(
        6,
        "box_pushing",
        pass,
        &format!(
            "best {:.6} vs reference {:.6} ({:.2}% off), worst likelihood drop {:.1e}",
            v,
            BOX_GOLDEN,
            rel * 100.0,
            worst_drop
        ),
    );
}

#[test]
fn acceptance_07_likelihood_value_identity() {
    let mut worst_ratio = 0.0f64;
    let mut checks = 0usize;
    for name in ["dectiger", "broadcast", "recycling"] {
        let m = load_bench(name);
        let rhat = m.normalize_rewards();
        let idx = m.successor_index();
        let gamma = m.discount;
        let k = hard_cap(gamma);
        for seed in 0..20u64 {
            let pol = init_random(&m.dims(), 2, 2, 1000 + seed);
            let kernel = JointKernel::build(&m, &idx, &pol);
            let msgs = build_messages(&kernel, &pol, &m, &rhat, CutoffMode::Fixed(k), None);
            let mapped = value_from_likelihood(msgs.likelihood, &rhat, gamma);
            let exact = evaluate_exact(&m, &pol, 1e-12).expect("evaluation").v_b0;
            let bound = (rhat.r_max - rhat.r_min) * gamma.powi(msgs.cutoff as i32 + 1)
                / (1.0 - gamma)
                + 1e-6;
            let diff = (mapped - exact).abs();
            assert!(
                diff <= bound,
                "{name} seed {seed}: |{mapped} - {exact}| = {diff} > {bound}"
            );
            worst_ratio = worst_ratio.max(diff / bound);
            checks += 1;
        }
    }
    report(
        7,
        "likelihood-value identity",
        true,
        &format!("{checks} policy evaluations, worst |diff|/bound = {:.3}", worst_ratio),
    );
}

#[test]
fn acceptance_08_single_agent_reduction() {
    let pomdp = toy_pomdp();
    let m = pomdp.embed();
    let rhat = m.normalize_rewards();
    let idx = m.successor_index();
    let cutoff = 60;

    let mut pol = init_random(&m.dims(), 3, 1, 11);
    let mut oracle = ControllerEm::new(
        3,
        pol.agent1.action.clone(),
        pol.agent1.transition.clone(),
        pol.agent1.start.clone(),
        cutoff,
    );

    let mut max_diff = 0.0f64;
    for iter in 0..25 {
        let kernel = JointKernel::build(&m, &idx, &pol);
        let msgs = build_messages(&kernel, &pol, &m, &rhat, CutoffMode::Fixed(cutoff), None);
        pol = m_step(&m, &rhat, &idx, &pol, &msgs).expect("update succeeds");
        oracle.step(&pomdp);

        let diff = max_abs_diff(&pol.agent1.action, &oracle.pi)
            .max(max_abs_diff(&pol.agent1.transition, &oracle.lam))
            .max(max_abs_diff(&pol.agent1.start, &oracle.nu));
        assert!(
            diff <= 1e-10,
            "iteration {iter}: controllers diverged by {diff}"
        );
        max_diff = max_diff.max(diff);
    }
    report(
        8,
        "single-agent reduction",
        true,
        &format!("25 iterations, max entrywise divergence {:.2e}", max_diff),
    );
}

#[test]
fn acceptance_09_pruning_exactness() {
    let cutoff = 40;
    let mut worst_kernel = 0.0f64;
    let mut worst_msgs = 0.0f64;
    let mut worst_update = 0.0f64;
    for seed in 0..10u64 {
        let m = random_sparse_model(seed);
        let d = m.dims();
        let n1 = 1 + (seed as usize % 3);
        let n2 = 1 + ((seed as usize + 1) % 3);
        let mut pol = init_random(&d, n1, n2, 500 + seed);
        plant_policy_zeros(&mut pol);
        pol.validate(&d).expect("planted policy stays valid");
        let idx = m.successor_index();

        let kernel = JointKernel::build(&m, &idx, &pol);
        let dim = kernel.joint_dim();
        let mut lib_dense = vec![0.0; dim * dim];
        for j in 0..dim {
            let (cols, vals) = kernel.row(j);
            for (c, v) in cols.iter().zip(vals) {
                lib_dense[j * dim + *c as usize] = *v;
            }
        }
        let reference = dense_kernel(&m, &pol);
        worst_kernel = worst_kernel.max(max_abs_diff(&lib_dense, &reference));

        let rhat = m.normalize_rewards();
        let msgs = build_messages(&kernel, &pol, &m, &rhat, CutoffMode::Fixed(cutoff), None);
        let oracle_msgs = dense_messages(&m, &pol, cutoff);
        worst_msgs = worst_msgs
            .max(max_abs_diff(&msgs.alpha_hat, &oracle_msgs.alpha_hat))
            .max(max_abs_diff(&msgs.beta_hat, &oracle_msgs.beta_hat))
            .max((msgs.likelihood - oracle_msgs.likelihood).abs());

        let updated = m_step(&m, &rhat, &idx, &pol, &msgs).expect("update succeeds");
        let reference = dense_update(&m, &pol, &oracle_msgs);
        let lib_tables = [
            &updated.agent1.action,
            &updated.agent2.action,
            &updated.agent1.transition,
            &updated.agent2.transition,
            &updated.agent1.start,
            &updated.agent2.start,
        ];
        for (lib, oracle) in lib_tables.iter().zip(&reference) {
            worst_update = worst_update.max(max_abs_diff(lib, oracle));
        }
    }
    let pass = worst_kernel <= 1e-12 && worst_msgs <= 1e-12 && worst_update <= 1e-12;
    report(
        9,
        "pruning exactness",
        pass,
        &format!(
            "10 models; max |diff| kernel {:.1e}, messages {:.1e}, updates {:.1e}",
            worst_kernel, worst_msgs, worst_update
        ),
    );
}

#[test]
fn acceptance_10_monotone_likelihood() {
    let mut worst_drop = f64::NEG_INFINITY;
    let mut runs = 0usize;
    let mut iters = 0usize;
    for s in all_fixtures() {
        for run in &s.outcome.runs {
            runs += 1;
            iters += run.log.records.len();
            for w in run.log.records.windows(2) {
                worst_drop = worst_drop.max(w[0].likelihood - w[1].likelihood);
            }
        }
    }
    let pass = worst_drop <= 1e-9;
    report(
        10,
        "monotone likelihood",
        pass,
        &format!("{runs} runs, {iters} logged iterations, worst drop {:.2e}", worst_drop),
    );
}

#[test]
fn acceptance_11_simulation_consistency() {
    let mut detail = String::new();
    let mut pass = true;
    let picks: Vec<&Solved> = vec![
        &BROADCAST[1],
        &RECYCLING[0],
        &GRID[0],
        &TIGER,
        &BOX_PUSHING,
        &ROVERS,
    ];
    for s in picks {
        let best = &s.outcome.best_run().policy;
        let exact = evaluate_exact(&s.model, best, 1e-10).expect("evaluation").v_b0;
        let sim = simulate(&s.model, best, 100_000, None, 20_240_501).expect("simulation");
        let margin = 4.0 * sim.std_error + sim.bias_bound;
        let diff = (sim.mean - exact).abs();
        pass &= diff <= margin;
        detail.push_str(&format!(
            "{}: |{:.4} - {:.4}| = {:.4} <= {:.4}; ",
            s.problem, sim.mean, exact, diff, margin
        ));
    }
    report(11, "simulation consistency", pass, detail.trim_end_matches("; "));
}

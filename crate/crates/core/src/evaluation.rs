//! Exact and Monte-Carlo evaluation of a controller pair.
//!
//! The value of a joint state `(p, q, s)` satisfies a linear fixed point under
//! the same joint-chain kernel the solver propagates messages with:
//! `V = r + gamma * K V`, where `r` is the per-step expected reward. Exact
//! evaluation solves this by value iteration (or, for small joint spaces, a
//! dense linear solve); simulation executes the controllers decentrally, each
//! agent seeing only its own observations.

use crate::controller::JointPolicy;
use crate::em::{messages, JointKernel};
use crate::error::{Error, Result};
use crate::model::DecPomdpModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How the linear fixed point is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMethod {
    ValueIteration,
    LinearSolve,
}

/// Largest joint dimension the dense linear solve accepts.
pub const LINEAR_SOLVE_LIMIT: usize = 5000;

/// Exact values of every joint state plus the value at the initial belief.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueTable {
    pub n1: usize,
    pub n2: usize,
    pub states: usize,
    /// `v[(p * n2 + q) * states + s]`
    pub v: Vec<f64>,
    /// Value at the model's initial belief under the controllers' initial nodes.
    pub v_b0: f64,
    /// Final sup-norm change (value iteration) or 0 (linear solve).
    pub residual: f64,
    pub iterations: usize,
    pub method: EvalMethod,
}

impl ValueTable {
    #[inline]
    pub fn at(&self, p: usize, q: usize, s: usize) -> f64 {
        self.v[(p * self.n2 + q) * self.states + s]
    }
}

/// Expected discounted value of the controller pair at an arbitrary belief,
/// with both agents starting from their initial node distributions.
pub fn value_at_belief(vt: &ValueTable, pol: &JointPolicy, belief: &[f64]) -> f64 {
    assert_eq!(belief.len(), vt.states, "belief length must match the state count");
    let mut sum = 0.0;
    for p in 0..vt.n1 {
        let np = pol.agent1.nu(p);
        if np == 0.0 {
            continue;
        }
        for q in 0..vt.n2 {
            let w = np * pol.agent2.nu(q);
            if w == 0.0 {
                continue;
            }
            for (s, &bs) in belief.iter().enumerate() {
                sum += w * bs * vt.at(p, q, s);
            }
        }
    }
    sum
}

/// Evaluates the controller pair exactly by value iteration.
///
/// Stops when the sup-norm change drops to `tol`; the remaining error is then
/// at most `tol * gamma / (1 - gamma)`.
pub fn evaluate_exact(m: &DecPomdpModel, pol: &JointPolicy, tol: f64) -> Result<ValueTable> {
    evaluate_with(m, pol, tol, EvalMethod::ValueIteration)
}

/// Evaluates with an explicit method choice.
pub fn evaluate_with(
    m: &DecPomdpModel,
    pol: &JointPolicy,
    tol: f64,
    method: EvalMethod,
) -> Result<ValueTable> {
    let d = m.dims();
    pol.validate(&d)?;
    let idx = m.successor_index();
    let kernel = JointKernel::build(m, &idx, pol);
    let r = messages::initial_beta(&m.reward, pol, d.states, d.actions[0], d.actions[1]);
    let gamma = m.discount;
    let joint = kernel.joint_dim();

    let (v, residual, iterations) = match method {
        EvalMethod::ValueIteration => {
            let mut v = vec![0.0; joint];
            let mut iterations = 0usize;
            loop {
                let mut next = kernel.apply_backward(&v);
                let mut residual = 0.0f64;
                for j in 0..joint {
                    next[j] = r[j] + gamma * next[j];
                    residual = residual.max((next[j] - v[j]).abs());
                }
                v = next;
                iterations += 1;
                if residual <= tol {
                    break (v, residual, iterations);
                }
                if !residual.is_finite() {
                    return Err(Error::Numerical("value iteration diverged".into()));
                }
                if iterations >= 10_000_000 {
                    return Err(Error::Numerical(format!(
                        "value iteration did not reach tolerance {tol} (residual {residual})"
                    )));
                }
            }
        }
        EvalMethod::LinearSolve => {
            if joint > LINEAR_SOLVE_LIMIT {
                return Err(Error::InvalidPolicy(format!(
                    "linear solve supports joint dimension <= {LINEAR_SOLVE_LIMIT}, got {joint}"
                )));
            }
            // Dense (I - gamma * K) V = r with partial pivoting; the matrix is
            // strictly diagonally dominant for gamma < 1.
            let mut mat = vec![0.0f64; joint * joint];
            for j in 0..joint {
                mat[j * joint + j] = 1.0;
                let (cols, probs) = kernel.row(j);
                for (c, p) in cols.iter().zip(probs) {
                    mat[j * joint + *c as usize] -= gamma * p;
                }
            }
            let mut rhs = r.clone();
            for col in 0..joint {
                let mut pivot = col;
                for row in col + 1..joint {
                    if mat[row * joint + col].abs() > mat[pivot * joint + col].abs() {
                        pivot = row;
                    }
                }
                if mat[pivot * joint + col].abs() < 1e-300 {
                    return Err(Error::Numerical("singular system in linear solve".into()));
                }
                if pivot != col {
                    for k in 0..joint {
                        mat.swap(col * joint + k, pivot * joint + k);
                    }
                    rhs.swap(col, pivot);
                }
                let diag = mat[col * joint + col];
                for row in col + 1..joint {
                    let f = mat[row * joint + col] / diag;
                    if f == 0.0 {
                        continue;
                    }
                    for k in col..joint {
                        mat[row * joint + k] -= f * mat[col * joint + k];
                    }
                    rhs[row] -= f * rhs[col];
                }
            }
            let mut v = vec![0.0; joint];
            for row in (0..joint).rev() {
                let mut acc = rhs[row];
                for k in row + 1..joint {
                    acc -= mat[row * joint + k] * v[k];
                }
                v[row] = acc / mat[row * joint + row];
            }
            (v, 0.0, 1)
        }
    };

    let vt = ValueTable {
        n1: pol.agent1.nodes,
        n2: pol.agent2.nodes,
        states: d.states,
        v_b0: 0.0,
        v,
        residual,
        iterations,
        method,
    };
    let v_b0 = value_at_belief(&vt, pol, &m.start);
    Ok(ValueTable { v_b0, ..vt })
}

/// A Monte-Carlo estimate of the value at the initial belief.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimulationEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
    pub horizon: usize,
    /// Upper bound on the bias from truncating episodes at the horizon.
    pub bias_bound: f64,
}

/// Default episode length: the smallest `h` with `gamma^h < 1e-6`.
pub fn default_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let mut h = (1e-6f64.ln() / gamma.ln()).ceil() as usize;
    while gamma.powi(h as i32) >= 1e-6 {
        h += 1;
    }
    h.min(1_000_000).max(1)
}

fn sample_index(rng: &mut impl Rng, probs: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Estimates the value of the controller pair by decentralized execution:
/// each agent updates its node from its own observation only.
///
/// Episodes are deterministic functions of `(seed, episode index)`.
pub fn simulate(
    m: &DecPomdpModel,
    pol: &JointPolicy,
    episodes: usize,
    horizon: Option<usize>,
    seed: u64,
) -> Result<SimulationEstimate> {
    let d = m.dims();
    pol.validate(&d)?;
    if episodes < 2 {
        return Err(Error::InvalidPolicy("simulation needs at least 2 episodes".into()));
    }
    let idx = m.successor_index();
    let gamma = m.discount;
    let horizon = horizon.unwrap_or_else(|| default_horizon(gamma));
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let (na, nb) = (d.actions[0], d.actions[1]);
    let nz = d.obs[1];

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for ep in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ep as u64);
        let mut s = sample_index(&mut rng, m.start.iter().copied().enumerate());
        let mut p = sample_index(&mut rng, pol.agent1.start.iter().copied().enumerate());
        let mut q = sample_index(&mut rng, pol.agent2.start.iter().copied().enumerate());
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = sample_index(&mut rng, (0..na).map(|a| (a, pol.agent1.pi(p, a))));
            let b = sample_index(&mut rng, (0..nb).map(|b| (b, pol.agent2.pi(q, b))));
            ret += disc * m.r(s, a, b);
            disc *= gamma;
            let s2 = sample_index(
                &mut rng,
                idx.forward(s, a, b).iter().map(|&t| (t as usize, m.t(s, a, b, t as usize))),
            );
            let yz = sample_index(
                &mut rng,
                idx.obs_support(s2, a, b).iter().map(|&o| {
                    let (y, z) = ((o as usize) / nz, (o as usize) % nz);
                    (o as usize, m.o(s2, a, b, y, z))
                }),
            );
            let (y, z) = (yz / nz, yz % nz);
            p = sample_index(&mut rng, (0..n1).map(|n| (n, pol.agent1.lam(p, y, n))));
            q = sample_index(&mut rng, (0..n2).map(|n| (n, pol.agent2.lam(q, z, n))));
            s = s2;
        }
        sum += ret;
        sum_sq += ret * ret;
    }

    let n = episodes as f64;
    let mean = sum / n;
    let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    let r_abs = m
        .reward
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    Ok(SimulationEstimate {
        mean,
        std_error: (var / n).sqrt(),
        episodes,
        horizon,
        bias_bound: gamma.powi(horizon as i32) * r_abs / (1.0 - gamma),
    })
}

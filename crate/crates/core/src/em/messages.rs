//! Forward/backward messages over the mixture of finite-horizon networks.
//!
//! The infinite-horizon problem is treated as a mixture of finite-horizon
//! chains, one per horizon `T`, weighted by the geometric time prior
//! `P(T) = gamma^T (1 - gamma)`. Forward messages `alpha_t` propagate the
//! initial distribution of `(p, q, s)`; backward messages `beta_tau` propagate
//! the rescaled terminal reward. The per-horizon likelihood
//! `L_T = <alpha_t, beta_(T-t)>` is independent of the split `t + tau = T`.

use crate::controller::JointPolicy;
use crate::em::JointKernel;
use crate::model::{DecPomdpModel, NormalizedRewards};
use serde::{Deserialize, Serialize};

/// How far to unroll the horizon mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    /// Unconditionally propagate `K` steps on each side.
    Fixed(usize),
    /// Stop at the smallest `k >= 1` whose remaining reward mass, measured by
    /// `gamma^(2k) * L_(2k)`, is at most `epsilon` times the mass already
    /// accumulated over horizons `T < 2k`. Capped by [`hard_cap`].
    Adaptive { epsilon: f64 },
}

impl Default for CutoffMode {
    fn default() -> Self {
        CutoffMode::Adaptive { epsilon: 1e-8 }
    }
}

/// Largest horizon the adaptive rule may reach: the smallest `K` with
/// `gamma^K <= 1e-9` (0 when `gamma == 0`).
pub fn hard_cap(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 0;
    }
    (1e-9f64.ln() / gamma.ln()).ceil() as usize
}

/// Messages and horizon-mixture statistics for one controller pair.
#[derive(Clone, Debug)]
pub struct MessageSet {
    /// `alpha[t]`, `t = 0..=cutoff`: state distribution after `t` steps.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[tau]`, `tau = 0..=cutoff`: expected rescaled reward `tau` steps later.
    pub beta: Vec<Vec<f64>>,
    /// Time-prior-weighted sums of the message sequences.
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    /// `lik_per_t[T] = L_T`.
    pub lik_per_t: Vec<f64>,
    /// The horizon `K` the propagation stopped at.
    pub cutoff: usize,
    /// `sum_T P(T) L_T` over `T = 0..=cutoff`.
    pub likelihood: f64,
    /// `sum_T P(T)` over `T = 0..=cutoff`, i.e. `1 - gamma^(K+1)`.
    pub time_prior_mass: f64,
}

/// `alpha_0(p, q, s) = nu1(p) nu2(q) b0(s)`.
fn initial_alpha(pol: &JointPolicy, b0: &[f64]) -> Vec<f64> {
    let (n1, n2, ns) = (pol.agent1.nodes, pol.agent2.nodes, b0.len());
    let mut out = vec![0.0; n1 * n2 * ns];
    for p in 0..n1 {
        let np = pol.agent1.nu(p);
        for q in 0..n2 {
            let w = np * pol.agent2.nu(q);
            for (s, &bs) in b0.iter().enumerate() {
                out[(p * n2 + q) * ns + s] = w * bs;
            }
        }
    }
    out
}

/// `beta_0(p, q, s) = sum_(a,b) r(s, a, b) pi1(a|p) pi2(b|q)` for a reward
/// table `r` laid out as `[s][a][b]`. Also the per-step expected reward of the
/// joint chain, which is why policy evaluation shares it.
pub(crate) fn initial_beta(
    reward: &[f64],
    pol: &JointPolicy,
    ns: usize,
    na: usize,
    nb: usize,
) -> Vec<f64> {
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let mut out = vec![0.0; n1 * n2 * ns];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let mut sum = 0.0;
                for a in 0..na {
                    let pa = pol.agent1.pi(p, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for b in 0..nb {
                        sum += pa * pol.agent2.pi(q, b) * reward[(s * na + a) * nb + b];
                    }
                }
                out[(p * n2 + q) * ns + s] = sum;
            }
        }
    }
    out
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Forward messages `alpha_0..alpha_k`.
pub fn forward_messages(kernel: &JointKernel, pol: &JointPolicy, b0: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(initial_alpha(pol, b0));
    for t in 1..=k {
        let next = kernel.apply_forward(&out[t - 1]);
        out.push(next);
    }
    out
}

/// Backward messages `beta_0..beta_k` under the rescaled reward.
pub fn backward_messages(
    kernel: &JointKernel,
    pol: &JointPolicy,
    m: &DecPomdpModel,
    rhat: &NormalizedRewards,
    k: usize,
) -> Vec<Vec<f64>> {
    let d = m.dims();
    let mut out = Vec::with_capacity(k + 1);
    out.push(initial_beta(&rhat.r_hat, pol, d.states, d.actions[0], d.actions[1]));
    for t in 1..=k {
        let next = kernel.apply_backward(&out[t - 1]);
        out.push(next);
    }
    out
}

/// Backward messages under the *raw* reward table. Diagnostic: their
/// discounted sum converges to the exact value function, which cross-checks
/// the message propagation against independent policy evaluation.
pub fn backward_messages_raw(
    kernel: &JointKernel,
    pol: &JointPolicy,
    m: &DecPomdpModel,
    k: usize,
) -> Vec<Vec<f64>> {
    let d = m.dims();
    let mut out = Vec::with_capacity(k + 1);
    out.push(initial_beta(&m.reward, pol, d.states, d.actions[0], d.actions[1]));
    for t in 1..=k {
        let next = kernel.apply_backward(&out[t - 1]);
        out.push(next);
    }
    out
}

/// Runs the E-step propagation for one controller pair.
///
/// `min_cutoff` forces the adaptive rule to propagate at least that far; the
/// EM driver uses it to keep the horizon monotone within a run so that the
/// reported likelihood can only gain mass from horizon growth.
pub fn build_messages(
    kernel: &JointKernel,
    pol: &JointPolicy,
    m: &DecPomdpModel,
    rhat: &NormalizedRewards,
    mode: CutoffMode,
    min_cutoff: Option<usize>,
) -> MessageSet {
    let gamma = m.discount;
    let mut alpha = vec![initial_alpha(pol, &m.start)];
    let mut beta = {
        let d = m.dims();
        vec![initial_beta(&rhat.r_hat, pol, d.states, d.actions[0], d.actions[1])]
    };

    // lik2[T] = L_T, filled up to 2k while propagating to k.
    let mut lik2 = vec![dot(&alpha[0], &beta[0])];
    let cutoff = match mode {
        CutoffMode::Fixed(k) => {
            for t in 1..=k {
                alpha.push(kernel.apply_forward(&alpha[t - 1]));
                beta.push(kernel.apply_backward(&beta[t - 1]));
                lik2.push(dot(&alpha[t], &beta[t - 1]));
                lik2.push(dot(&alpha[t], &beta[t]));
            }
            k
        }
        CutoffMode::Adaptive { epsilon } => {
            let cap = hard_cap(gamma);
            let floor = min_cutoff.unwrap_or(0).min(cap);
            let mut weighted_so_far = (1.0 - gamma) * lik2[0];
            let mut k = 0;
            while k < cap {
                k += 1;
                alpha.push(kernel.apply_forward(&alpha[k - 1]));
                beta.push(kernel.apply_backward(&beta[k - 1]));
                let l_odd = dot(&alpha[k], &beta[k - 1]);
                let l_even = dot(&alpha[k], &beta[k]);
                lik2.push(l_odd);
                lik2.push(l_even);
                weighted_so_far += gamma.powi(2 * k as i32 - 1) * (1.0 - gamma) * l_odd;
                let tail = gamma.powi(2 * k as i32) * l_even;
                if k >= floor.max(1) && tail <= epsilon * weighted_so_far {
                    break;
                }
                weighted_so_far += gamma.powi(2 * k as i32) * (1.0 - gamma) * l_even;
            }
            k
        }
    };

    alpha.truncate(cutoff + 1);
    beta.truncate(cutoff + 1);
    lik2.truncate(cutoff + 1);

    let joint = kernel.joint_dim();
    let mut alpha_hat = vec![0.0; joint];
    let mut beta_hat = vec![0.0; joint];
    let mut likelihood = 0.0;
    let mut time_prior_mass = 0.0;
    let mut w = 1.0 - gamma;
    for t in 0..=cutoff {
        for j in 0..joint {
            alpha_hat[j] += w * alpha[t][j];
            beta_hat[j] += w * beta[t][j];
        }
        likelihood += w * lik2[t];
        time_prior_mass += w;
        w *= gamma;
    }

    MessageSet {
        alpha,
        beta,
        alpha_hat,
        beta_hat,
        lik_per_t: lik2,
        cutoff,
        likelihood,
        time_prior_mass,
    }
}

/// Maps a reward likelihood back to the value of the policy at the initial
/// belief: `V = (r_max - r_min) L / (1 - gamma) + r_min / (1 - gamma)`.
/// Exact for the untruncated likelihood; truncation at horizon `K` can lower
/// the result by at most `(r_max - r_min) * gamma^(K+1) / (1 - gamma)`.
pub fn value_from_likelihood(likelihood: f64, rhat: &NormalizedRewards, gamma: f64) -> f64 {
    if rhat.degenerate {
        return rhat.r_min / (1.0 - gamma);
    }
    ((rhat.r_max - rhat.r_min) * likelihood + rhat.r_min) / (1.0 - gamma)
}

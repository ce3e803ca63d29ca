//! Shared helpers and independent oracles for the acceptance gates.
//!
//! Everything here is written from scratch against the public model/policy
//! accessors only: dense, unpruned message passing and parameter updates, and
//! a stand-alone single-agent controller EM. The solver must agree with these
//! within tight tolerances, so none of its internals are reused.

#![allow(dead_code)]

use decpomdp::controller::JointPolicy;
use decpomdp::model::DecPomdpModel;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Resolves a path relative to the repository root.
pub fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Loads a bundled benchmark instance by name.
pub fn load_bench(name: &str) -> DecPomdpModel {
    let path = repo_path(&format!("benchmarks/{name}.dpomdp"));
    DecPomdpModel::from_dpomdp_file(&path)
        .unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}

/// Prints the one-line verdict for a criterion and fails the test on FAIL.
pub fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n} {name}: {verdict} - {detail}");
    assert!(pass, "ACCEPTANCE {n} {name}: {verdict} - {detail}");
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Random sparse models
// ---------------------------------------------------------------------------

/// A random model with genuinely sparse transition and observation rows, so
/// support-based pruning has something to prune. Dimensions vary with the
/// seed: 2-6 states, 2-3 actions and observations per agent.
pub fn random_sparse_model(seed: u64) -> DecPomdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(seed));
    let ns = rng.gen_range(2..=6usize);
    let na = rng.gen_range(2..=3usize);
    let nb = rng.gen_range(2..=3usize);
    let ny = rng.gen_range(2..=3usize);
    let nz = rng.gen_range(2..=3usize);

    let names = |prefix: &str, k: usize| (0..k).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
    let mut m = DecPomdpModel::zeroed(
        &format!("sparse-{seed}"),
        0.9,
        names("s", ns),
        [names("a", na), names("b", nb)],
        [names("y", ny), names("z", nz)],
    );

    let mut start: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 0.05).collect();
    let z: f64 = start.iter().sum();
    for x in &mut start {
        *x /= z;
    }
    m.start = start;

    for s in 0..ns {
        for a in 0..na {
            for b in 0..nb {
                let k = rng.gen_range(1..=ns.min(3));
                let support = sample(&mut rng, ns, k);
                let weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.1).collect();
                let z: f64 = weights.iter().sum();
                for (i, s2) in support.iter().enumerate() {
                    m.set_t(s, a, b, s2, weights[i] / z);
                }
                m.set_r(s, a, b, if rng.gen::<f64>() < 0.2 { 0.0 } else { rng.gen::<f64>() * 10.0 - 5.0 });
            }
        }
    }
    for s2 in 0..ns {
        for a in 0..na {
            for b in 0..nb {
                let pairs = ny * nz;
                let k = rng.gen_range(1..=pairs.min(4));
                let support = sample(&mut rng, pairs, k);
                let weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.1).collect();
                let z: f64 = weights.iter().sum();
                for (i, yz) in support.iter().enumerate() {
                    m.set_o(s2, a, b, yz / nz, yz % nz, weights[i] / z);
                }
            }
        }
    }
    m.validate().expect("random sparse model is valid");
    m
}

/// Zeroes one entry in each kind of policy table (when the row has at least
/// two entries) and renormalizes, so pruning also sees structural zeros in
/// the controllers themselves.
pub fn plant_policy_zeros(pol: &mut JointPolicy) {
    fn zero_first(row: &mut [f64]) {
        if row.len() < 2 {
            return;
        }
        row[0] = 0.0;
        let z: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    let na = pol.agent1.num_actions;
    zero_first(&mut pol.agent1.action[..na]);
    let n2 = pol.agent2.nodes;
    zero_first(&mut pol.agent2.transition[..n2]);
    zero_first(&mut pol.agent2.start);
}

// ---------------------------------------------------------------------------
// Dense (unpruned) reference pipeline
// ---------------------------------------------------------------------------

/// Row-major dense transition matrix of the joint node-node-state chain,
/// built with full loops over every action, state, and observation.
pub fn dense_kernel(m: &DecPomdpModel, pol: &JointPolicy) -> Vec<f64> {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let dim = n1 * n2 * ns;
    let mut k = vec![0.0; dim * dim];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let row = ((p * n2 + q) * ns + s) * dim;
                for a in 0..na {
                    for b in 0..nb {
                        let w_ab = pol.agent1.pi(p, a) * pol.agent2.pi(q, b);
                        for s2 in 0..ns {
                            let w_t = w_ab * m.t(s, a, b, s2);
                            for y in 0..ny {
                                for z in 0..nz {
                                    let w_o = w_t * m.o(s2, a, b, y, z);
                                    for p2 in 0..n1 {
                                        let w_1 = w_o * pol.agent1.lam(p, y, p2);
                                        for q2 in 0..n2 {
                                            k[row + (p2 * n2 + q2) * ns + s2] +=
                                                w_1 * pol.agent2.lam(q, z, q2);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    k
}

/// Reward table rescaled to [0, 1], plus the range, computed directly.
pub fn rescaled_rewards(m: &DecPomdpModel) -> (Vec<f64>, f64, f64) {
    let r_min = m.reward.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max = m.reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = r_max - r_min;
    let rhat = m.reward.iter().map(|&r| (r - r_min) / range).collect();
    (rhat, r_min, r_max)
}

/// Time-prior-weighted forward/backward statistics, propagated densely for a
/// fixed number of steps.
pub struct DenseMessages {
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub likelihood: f64,
    pub cutoff: usize,
}

pub fn dense_messages(m: &DecPomdpModel, pol: &JointPolicy, cutoff: usize) -> DenseMessages {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let dim = n1 * n2 * ns;
    let kernel = dense_kernel(m, pol);
    let (rhat, _, _) = rescaled_rewards(m);
    let gamma = m.discount;

    let mut alpha = vec![0.0; dim];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                alpha[(p * n2 + q) * ns + s] =
                    pol.agent1.nu(p) * pol.agent2.nu(q) * m.start[s];
            }
        }
    }
    let mut beta = vec![0.0; dim];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let mut sum = 0.0;
                for a in 0..na {
                    for b in 0..nb {
                        sum += pol.agent1.pi(p, a)
                            * pol.agent2.pi(q, b)
                            * rhat[(s * na + a) * nb + b];
                    }
                }
                beta[(p * n2 + q) * ns + s] = sum;
            }
        }
    }

    // Full message lists: the horizon-T likelihood is the inner product of a
    // forward and a backward message whose indices sum to T (any split works;
    // the all-forward split is used here).
    let mut alphas = vec![alpha];
    let mut betas = vec![beta];
    for t in 1..=cutoff {
        let mut next_a = vec![0.0; dim];
        let mut next_b = vec![0.0; dim];
        for j in 0..dim {
            let aj = alphas[t - 1][j];
            let row = &kernel[j * dim..(j + 1) * dim];
            let mut acc = 0.0;
            for (j2, &kjj) in row.iter().enumerate() {
                next_a[j2] += aj * kjj;
                acc += kjj * betas[t - 1][j2];
            }
            next_b[j] = acc;
        }
        alphas.push(next_a);
        betas.push(next_b);
    }

    let mut alpha_hat = vec![0.0; dim];
    let mut beta_hat = vec![0.0; dim];
    let mut likelihood = 0.0;
    let mut w = 1.0 - gamma;
    for t in 0..=cutoff {
        for j in 0..dim {
            alpha_hat[j] += w * alphas[t][j];
            beta_hat[j] += w * betas[t][j];
        }
        likelihood += w * alphas[t].iter().zip(&betas[0]).map(|(x, y)| x * y).sum::<f64>();
        w *= gamma;
    }

    DenseMessages { alpha_hat, beta_hat, likelihood, cutoff }
}

/// The row renormalization contract of the multiplicative updates: positive
/// entries are floored at 1e-12 before dividing, zero rows fall back to the
/// previous parameters.
pub fn floor_renormalize(row: &mut [f64], old: &[f64]) {
    let sum: f64 = row.iter().sum();
    if sum <= 1e-300 {
        row.copy_from_slice(old);
        return;
    }
    let mut floored = 0.0;
    for (x, &o) in row.iter_mut().zip(old) {
        if o > 0.0 && *x < 1e-12 {
            *x = 1e-12;
        }
        floored += *x;
    }
    for x in row.iter_mut() {
        *x /= floored;
    }
}

/// All six parameter tables after one dense, unpruned update from the given
/// weighted messages. Returned in the order: agent-1 actions, agent-2 actions,
/// agent-1 node transitions, agent-2 node transitions, agent-1 start,
/// agent-2 start.
pub fn dense_update(
    m: &DecPomdpModel,
    pol: &JointPolicy,
    msgs: &DenseMessages,
) -> [Vec<f64>; 6] {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let (rhat, _, _) = rescaled_rewards(m);
    let gamma = m.discount;
    let future_w = if gamma > 0.0 { gamma / (1.0 - gamma) } else { 0.0 };

    // Expected downstream reward of (a, b) from joint state (p, q, s):
    // marginalize the next state, both observations, and both node moves.
    let future = |p: usize, q: usize, s: usize, a: usize, b: usize| -> f64 {
        let mut sum = 0.0;
        for s2 in 0..ns {
            let pt = m.t(s, a, b, s2);
            for y in 0..ny {
                for z in 0..nz {
                    let po = m.o(s2, a, b, y, z);
                    let mut adv = 0.0;
                    for p2 in 0..n1 {
                        for q2 in 0..n2 {
                            adv += pol.agent1.lam(p, y, p2)
                                * pol.agent2.lam(q, z, q2)
                                * msgs.beta_hat[(p2 * n2 + q2) * ns + s2];
                        }
                    }
                    sum += pt * po * adv;
                }
            }
        }
        sum
    };

    let mut act1 = vec![0.0; n1 * na];
    let mut act2 = vec![0.0; n2 * nb];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let w = msgs.alpha_hat[(p * n2 + q) * ns + s];
                for a in 0..na {
                    for b in 0..nb {
                        let payoff = rhat[(s * na + a) * nb + b] + future_w * future(p, q, s, a, b);
                        act1[p * na + a] += w * pol.agent2.pi(q, b) * payoff;
                        act2[q * nb + b] += w * pol.agent1.pi(p, a) * payoff;
                    }
                }
            }
        }
    }
    for (i, x) in act1.iter_mut().enumerate() {
        *x *= pol.agent1.action[i];
    }
    for (i, x) in act2.iter_mut().enumerate() {
        *x *= pol.agent2.action[i];
    }

    let mut tr1 = vec![0.0; n1 * ny * n1];
    let mut tr2 = vec![0.0; n2 * nz * n2];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let w = msgs.alpha_hat[(p * n2 + q) * ns + s];
                for a in 0..na {
                    for b in 0..nb {
                        let w_ab = w * pol.agent1.pi(p, a) * pol.agent2.pi(q, b);
                        for s2 in 0..ns {
                            let w_t = w_ab * m.t(s, a, b, s2);
                            for y in 0..ny {
                                for z in 0..nz {
                                    let w_o = w_t * m.o(s2, a, b, y, z);
                                    for p2 in 0..n1 {
                                        let mut down = 0.0;
                                        for q2 in 0..n2 {
                                            down += pol.agent2.lam(q, z, q2)
                                                * msgs.beta_hat[(p2 * n2 + q2) * ns + s2];
                                        }
                                        tr1[(p * ny + y) * n1 + p2] += w_o * down;
                                    }
                                    for q2 in 0..n2 {
                                        let mut down = 0.0;
                                        for p2 in 0..n1 {
                                            down += pol.agent1.lam(p, y, p2)
                                                * msgs.beta_hat[(p2 * n2 + q2) * ns + s2];
                                        }
                                        tr2[(q * nz + z) * n2 + q2] += w_o * down;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for (i, x) in tr1.iter_mut().enumerate() {
        *x *= pol.agent1.transition[i];
    }
    for (i, x) in tr2.iter_mut().enumerate() {
        *x *= pol.agent2.transition[i];
    }

    let mut nu1 = vec![0.0; n1];
    let mut nu2 = vec![0.0; n2];
    for p in 0..n1 {
        for q in 0..n2 {
            let mut mass = 0.0;
            for s in 0..ns {
                mass += m.start[s] * msgs.beta_hat[(p * n2 + q) * ns + s];
            }
            nu1[p] += pol.agent1.nu(p) * pol.agent2.nu(q) * mass;
            nu2[q] += pol.agent1.nu(p) * pol.agent2.nu(q) * mass;
        }
    }

    for n in 0..n1 {
        let (lo, hi) = (n * na, (n + 1) * na);
        floor_renormalize(&mut act1[lo..hi], &pol.agent1.action[lo..hi]);
    }
    for n in 0..n2 {
        let (lo, hi) = (n * nb, (n + 1) * nb);
        floor_renormalize(&mut act2[lo..hi], &pol.agent2.action[lo..hi]);
    }
    for n in 0..n1 {
        for y in 0..ny {
            let lo = (n * ny + y) * n1;
            floor_renormalize(&mut tr1[lo..lo + n1], &pol.agent1.transition[lo..lo + n1]);
        }
    }
    for n in 0..n2 {
        for z in 0..nz {
            let lo = (n * nz + z) * n2;
            floor_renormalize(&mut tr2[lo..lo + n2], &pol.agent2.transition[lo..lo + n2]);
        }
    }
    floor_renormalize(&mut nu1, &pol.agent1.start);
    floor_renormalize(&mut nu2, &pol.agent2.start);

    [act1, act2, tr1, tr2, nu1, nu2]
}

// ---------------------------------------------------------------------------
// Stand-alone single-agent controller EM
// ---------------------------------------------------------------------------

/// A single-agent partially observable model: `t[(s*na+a)*ns+s2]`,
/// `o[(s2*na+a)*ny+y]`, `r[s*na+a]`.
pub struct Pomdp {
    pub ns: usize,
    pub na: usize,
    pub ny: usize,
    pub gamma: f64,
    pub b0: Vec<f64>,
    pub t: Vec<f64>,
    pub o: Vec<f64>,
    pub r: Vec<f64>,
}

impl Pomdp {
    fn t(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.t[(s * self.na + a) * self.ns + s2]
    }
    fn o(&self, s2: usize, a: usize, y: usize) -> f64 {
        self.o[(s2 * self.na + a) * self.ny + y]
    }

    /// Embeds the model as a two-agent problem in which the second agent has
    /// one action and one observation and therefore no influence at all.
    pub fn embed(&self) -> DecPomdpModel {
        let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let mut m = DecPomdpModel::zeroed(
            "embedded",
            self.gamma,
            names("s", self.ns),
            [names("a", self.na), vec!["noop".into()]],
            [names("y", self.ny), vec!["null".into()]],
        );
        m.start = self.b0.clone();
        for s in 0..self.ns {
            for a in 0..self.na {
                for s2 in 0..self.ns {
                    m.set_t(s, a, 0, s2, self.t(s, a, s2));
                    for y in 0..self.ny {
                        m.set_o(s2, a, 0, y, 0, self.o(s2, a, y));
                    }
                }
                m.set_r(s, a, 0, self.r[s * self.na + a]);
            }
        }
        m.validate().expect("embedded model is valid");
        m
    }
}

/// A fixed toy instance used by the reduction gate.
pub fn toy_pomdp() -> Pomdp {
    Pomdp {
        ns: 3,
        na: 2,
        ny: 2,
        gamma: 0.9,
        b0: vec![0.5, 0.3, 0.2],
        t: vec![
            // s0: a0, a1
            0.7, 0.2, 0.1, 0.1, 0.8, 0.1, //
            // s1
            0.1, 0.6, 0.3, 0.3, 0.1, 0.6, //
            // s2
            0.2, 0.2, 0.6, 0.5, 0.4, 0.1,
        ],
        o: vec![
            // s2=0: a0, a1
            0.8, 0.2, 0.6, 0.4, //
            // s2=1
            0.3, 0.7, 0.1, 0.9, //
            // s2=2
            0.5, 0.5, 0.9, 0.1,
        ],
        r: vec![1.0, -0.5, 0.0, 2.0, -1.0, 0.5],
    }
}

/// EM over a single stochastic controller, written directly from the
/// single-agent mixture construction: `pi[p*na+a]`, `lam[(p*ny+y)*n+p2]`,
/// `nu[p]`.
pub struct ControllerEm {
    pub pi: Vec<f64>,
    pub lam: Vec<f64>,
    pub nu: Vec<f64>,
    pub n: usize,
    cutoff: usize,
}

impl ControllerEm {
    pub fn new(n: usize, pi: Vec<f64>, lam: Vec<f64>, nu: Vec<f64>, cutoff: usize) -> Self {
        ControllerEm { pi, lam, nu, n, cutoff }
    }

    /// One E-step + M-step against `p`, updating all three tables together.
    pub fn step(&mut self, p: &Pomdp) {
        let (ns, na, ny, n) = (p.ns, p.na, p.ny, self.n);
        let dim = n * ns;
        let gamma = p.gamma;
        let r_min = p.r.iter().cloned().fold(f64::INFINITY, f64::min);
        let r_max = p.r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rhat: Vec<f64> = p.r.iter().map(|&r| (r - r_min) / (r_max - r_min)).collect();

        // Dense chain over (node, state).
        let mut kernel = vec![0.0; dim * dim];
        for pn in 0..n {
            for s in 0..ns {
                let row = (pn * ns + s) * dim;
                for a in 0..na {
                    let pa = self.pi[pn * na + a];
                    for s2 in 0..ns {
                        let w_t = pa * p.t(s, a, s2);
                        for y in 0..ny {
                            let w_o = w_t * p.o(s2, a, y);
                            for p2 in 0..n {
                                kernel[row + p2 * ns + s2] +=
                                    w_o * self.lam[(pn * ny + y) * n + p2];
                            }
                        }
                    }
                }
            }
        }

        let mut alpha = vec![0.0; dim];
        for pn in 0..n {
            for s in 0..ns {
                alpha[pn * ns + s] = self.nu[pn] * p.b0[s];
            }
        }
        let mut beta = vec![0.0; dim];
        for pn in 0..n {
            for s in 0..ns {
                beta[pn * ns + s] = (0..na).map(|a| self.pi[pn * na + a] * rhat[s * na + a]).sum();
            }
        }
        let mut alpha_hat = vec![0.0; dim];
        let mut beta_hat = vec![0.0; dim];
        let mut w = 1.0 - gamma;
        for t in 0..=self.cutoff {
            for j in 0..dim {
                alpha_hat[j] += w * alpha[j];
                beta_hat[j] += w * beta[j];
            }
            w *= gamma;
            if t == self.cutoff {
                break;
            }
            let mut next_a = vec![0.0; dim];
            let mut next_b = vec![0.0; dim];
            for j in 0..dim {
                let aj = alpha[j];
                let row = &kernel[j * dim..(j + 1) * dim];
                let mut acc = 0.0;
                for (j2, &kjj) in row.iter().enumerate() {
                    next_a[j2] += aj * kjj;
                    acc += kjj * beta[j2];
                }
                next_b[j] = acc;
            }
            alpha = next_a;
            beta = next_b;
        }

        let future_w = gamma / (1.0 - gamma);
        let mut new_pi = vec![0.0; n * na];
        for pn in 0..n {
            for s in 0..ns {
                let wgt = alpha_hat[pn * ns + s];
                for a in 0..na {
                    let mut fut = 0.0;
                    for s2 in 0..ns {
                        let pt = p.t(s, a, s2);
                        for y in 0..ny {
                            let po = p.o(s2, a, y);
                            for p2 in 0..n {
                                fut += pt * po * self.lam[(pn * ny + y) * n + p2]
                                    * beta_hat[p2 * ns + s2];
                            }
                        }
                    }
                    new_pi[pn * na + a] += wgt * (rhat[s * na + a] + future_w * fut);
                }
            }
        }
        for (i, x) in new_pi.iter_mut().enumerate() {
            *x *= self.pi[i];
        }

        let mut new_lam = vec![0.0; n * ny * n];
        for pn in 0..n {
            for s in 0..ns {
                let wgt = alpha_hat[pn * ns + s];
                for a in 0..na {
                    let w_a = wgt * self.pi[pn * na + a];
                    for s2 in 0..ns {
                        let w_t = w_a * p.t(s, a, s2);
                        for y in 0..ny {
                            let w_o = w_t * p.o(s2, a, y);
                            for p2 in 0..n {
                                new_lam[(pn * ny + y) * n + p2] += w_o * beta_hat[p2 * ns + s2];
                            }
                        }
                    }
                }
            }
        }
        for (i, x) in new_lam.iter_mut().enumerate() {
            *x *= self.lam[i];
        }

        let mut new_nu = vec![0.0; n];
        for pn in 0..n {
            let mut mass = 0.0;
            for s in 0..ns {
                mass += p.b0[s] * beta_hat[pn * ns + s];
            }
            new_nu[pn] = self.nu[pn] * mass;
        }

        for pn in 0..n {
            let (lo, hi) = (pn * na, (pn + 1) * na);
            floor_renormalize(&mut new_pi[lo..hi], &self.pi[lo..hi]);
        }
        for pn in 0..n {
            for y in 0..ny {
                let lo = (pn * ny + y) * n;
                floor_renormalize(&mut new_lam[lo..lo + n], &self.lam[lo..lo + n]);
            }
        }
        floor_renormalize(&mut new_nu, &self.nu);

        self.pi = new_pi;
        self.lam = new_lam;
        self.nu = new_nu;
    }
}

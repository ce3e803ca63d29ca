//! Multiplicative parameter updates (the M-step).
//!
//! Every update reweights the current parameters by the expected reward
//! evidence computed from one shared E-step, so all tables are refreshed
//! together from the same message set and zero entries stay zero.

use crate::controller::{AgentFsc, JointPolicy};
use crate::em::MessageSet;
use crate::error::{Error, Result};
use crate::model::{DecPomdpModel, NormalizedRewards, SuccessorIndex};

/// Smallest probability a positive entry may shrink to during renormalization.
const PROB_FLOOR: f64 = 1e-12;
/// A normalizer at or below this is treated as an exact zero row.
const ZERO_ROW: f64 = 1e-300;
/// Evidence below this certifies a row as unreachable rather than broken.
const EVIDENCE_TOL: f64 = 1e-12;

/// Normalizes `row` in place. Entries whose old value was positive are floored
/// at `PROB_FLOOR` before dividing, so underflow cannot absorb a live entry;
/// entries that were exactly zero stay zero. A zero normalizer falls back to
/// the old row when `evidence` confirms the row is unreachable, and errors
/// otherwise.
fn renormalize_row(
    row: &mut [f64],
    old: &[f64],
    evidence: impl FnOnce() -> f64,
    what: &str,
) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if !sum.is_finite() {
        return Err(Error::Numerical(format!("{what}: normalizer is {sum}")));
    }
    if sum <= ZERO_ROW {
        let ev = evidence();
        if ev <= EVIDENCE_TOL {
            row.copy_from_slice(old);
            return Ok(());
        }
        return Err(Error::Numerical(format!(
            "{what}: update vanished (normalizer {sum:.3e}) despite evidence mass {ev:.3e}"
        )));
    }
    let mut floored = 0.0;
    for (x, &o) in row.iter_mut().zip(old) {
        if o > 0.0 && *x < PROB_FLOOR {
            *x = PROB_FLOOR;
        }
        floored += *x;
    }
    for x in row.iter_mut() {
        *x /= floored;
    }
    Ok(())
}

/// `G[p][q][y][z][s'] = sum_(p',q') lam1(p'|p,y) lam2(q'|q,z) beta_hat(p',q',s')`:
/// the expected downstream reward after the controllers advance on `(y, z)`.
fn node_advanced_beta(pol: &JointPolicy, beta_hat: &[f64], ny: usize, nz: usize, ns: usize) -> Vec<f64> {
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    // First advance agent 2: H[p'][q][z][s'] = sum_q' lam2(q'|q,z) beta_hat(p',q',s').
    let mut h = vec![0.0; n1 * n2 * nz * ns];
    for p2 in 0..n1 {
        for q in 0..n2 {
            for z in 0..nz {
                for q2 in 0..n2 {
                    let l2 = pol.agent2.lam(q, z, q2);
                    if l2 == 0.0 {
                        continue;
                    }
                    let src = (p2 * n2 + q2) * ns;
                    let dst = ((p2 * n2 + q) * nz + z) * ns;
                    for s2 in 0..ns {
                        h[dst + s2] += l2 * beta_hat[src + s2];
                    }
                }
            }
        }
    }
    let mut g = vec![0.0; n1 * n2 * ny * nz * ns];
    for p in 0..n1 {
        for y in 0..ny {
            for p2 in 0..n1 {
                let l1 = pol.agent1.lam(p, y, p2);
                if l1 == 0.0 {
                    continue;
                }
                for q in 0..n2 {
                    for z in 0..nz {
                        let src = ((p2 * n2 + q) * nz + z) * ns;
                        let dst = (((p * n2 + q) * ny + y) * nz + z) * ns;
                        for s2 in 0..ns {
                            g[dst + s2] += l1 * h[src + s2];
                        }
                    }
                }
            }
        }
    }
    g
}

/// `E[p][q][s][a][b]`: expected downstream reward of taking `(a, b)` in the
/// joint state `(p, q, s)`, marginalizing the next state, the observations,
/// and both controller transitions.
fn expected_future(
    m: &DecPomdpModel,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    beta_hat: &[f64],
) -> Vec<f64> {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let g = node_advanced_beta(pol, beta_hat, ny, nz, ns);

    let mut e = vec![0.0; n1 * n2 * ns * na * nb];
    for p in 0..n1 {
        for q in 0..n2 {
            let g_base = (p * n2 + q) * ny * nz * ns;
            for s in 0..ns {
                let e_base = ((p * n2 + q) * ns + s) * na * nb;
                for a in 0..na {
                    for b in 0..nb {
                        let mut sum = 0.0;
                        for &s2 in idx.forward(s, a, b) {
                            let s2 = s2 as usize;
                            let pt = m.t(s, a, b, s2);
                            for &yz in idx.obs_support(s2, a, b) {
                                let (y, z) = ((yz as usize) / nz, (yz as usize) % nz);
                                sum += pt
                                    * m.o(s2, a, b, y, z)
                                    * g[g_base + (y * nz + z) * ns + s2];
                            }
                        }
                        e[e_base + a * nb + b] = sum;
                    }
                }
            }
        }
    }
    e
}

/// Numerators of both agents' action updates (already multiplied by the
/// current action probabilities).
fn action_numerators(
    m: &DecPomdpModel,
    rhat: &NormalizedRewards,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    msgs: &MessageSet,
) -> (Vec<f64>, Vec<f64>) {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let gamma = m.discount;
    let future_w = if gamma > 0.0 { gamma / (1.0 - gamma) } else { 0.0 };
    let e = expected_future(m, idx, pol, &msgs.beta_hat);

    let mut acc1 = vec![0.0; n1 * na];
    let mut acc2 = vec![0.0; n2 * nb];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let w = msgs.alpha_hat[(p * n2 + q) * ns + s];
                if w == 0.0 {
                    continue;
                }
                let e_base = ((p * n2 + q) * ns + s) * na * nb;
                for a in 0..na {
                    for b in 0..nb {
                        let payoff = rhat.get(&d, s, a, b) + future_w * e[e_base + a * nb + b];
                        if payoff == 0.0 {
                            continue;
                        }
                        acc1[p * na + a] += w * pol.agent2.pi(q, b) * payoff;
                        acc2[q * nb + b] += w * pol.agent1.pi(p, a) * payoff;
                    }
                }
            }
        }
    }
    let num1: Vec<f64> = acc1
        .iter()
        .enumerate()
        .map(|(i, &v)| pol.agent1.action[i] * v)
        .collect();
    let num2: Vec<f64> = acc2
        .iter()
        .enumerate()
        .map(|(i, &v)| pol.agent2.action[i] * v)
        .collect();
    (num1, num2)
}

/// Numerators of both agents' node-transition updates: the current transition
/// probabilities reweighted by reach mass times expected downstream reward.
fn transition_numerators(
    m: &DecPomdpModel,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    msgs: &MessageSet,
) -> (Vec<f64>, Vec<f64>) {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);

    // W2[q][z][p'][s'] = sum_q' lam2(q'|q,z) beta_hat(p',q',s'), and symmetrically W1.
    let mut w2 = vec![0.0; n2 * nz * n1 * ns];
    for q in 0..n2 {
        for z in 0..nz {
            for q2 in 0..n2 {
                let l2 = pol.agent2.lam(q, z, q2);
                if l2 == 0.0 {
                    continue;
                }
                for p2 in 0..n1 {
                    let src = (p2 * n2 + q2) * ns;
                    let dst = ((q * nz + z) * n1 + p2) * ns;
                    for s2 in 0..ns {
                        w2[dst + s2] += l2 * msgs.beta_hat[src + s2];
                    }
                }
            }
        }
    }
    let mut w1 = vec![0.0; n1 * ny * n2 * ns];
    for p in 0..n1 {
        for y in 0..ny {
            for p2 in 0..n1 {
                let l1 = pol.agent1.lam(p, y, p2);
                if l1 == 0.0 {
                    continue;
                }
                for q2 in 0..n2 {
                    let src = (p2 * n2 + q2) * ns;
                    let dst = ((p * ny + y) * n2 + q2) * ns;
                    for s2 in 0..ns {
                        w1[dst + s2] += l1 * msgs.beta_hat[src + s2];
                    }
                }
            }
        }
    }

    // S1[p][y][p'] and S2[q][z][q']: evidence for moving to the new node after
    // observing the given symbol.
    let mut s1 = vec![0.0; n1 * ny * n1];
    let mut s2m = vec![0.0; n2 * nz * n2];
    for p in 0..n1 {
        for q in 0..n2 {
            for s in 0..ns {
                let w = msgs.alpha_hat[(p * n2 + q) * ns + s];
                if w == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let pa = pol.agent1.pi(p, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for b in 0..nb {
                        let w_ab = w * pa * pol.agent2.pi(q, b);
                        if w_ab == 0.0 {
                            continue;
                        }
                        for &st in idx.forward(s, a, b) {
                            let st = st as usize;
                            let w_t = w_ab * m.t(s, a, b, st);
                            for &yz in idx.obs_support(st, a, b) {
                                let (y, z) = ((yz as usize) / nz, (yz as usize) % nz);
                                let w_o = w_t * m.o(st, a, b, y, z);
                                let w2_base = ((q * nz + z) * n1) * ns + st;
                                let s1_base = (p * ny + y) * n1;
                                for p2 in 0..n1 {
                                    s1[s1_base + p2] += w_o * w2[w2_base + p2 * ns];
                                }
                                let w1_base = ((p * ny + y) * n2) * ns + st;
                                let s2_base = (q * nz + z) * n2;
                                for q2 in 0..n2 {
                                    s2m[s2_base + q2] += w_o * w1[w1_base + q2 * ns];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let num1: Vec<f64> = s1
        .iter()
        .enumerate()
        .map(|(i, &v)| pol.agent1.transition[i] * v)
        .collect();
    let num2: Vec<f64> = s2m
        .iter()
        .enumerate()
        .map(|(i, &v)| pol.agent2.transition[i] * v)
        .collect();
    (num1, num2)
}

/// Numerators of the initial-node updates; each normalizer equals the
/// truncated likelihood.
fn initial_numerators(pol: &JointPolicy, msgs: &MessageSet, b0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let ns = b0.len();
    let mut num1 = vec![0.0; n1];
    let mut num2 = vec![0.0; n2];
    for p in 0..n1 {
        for q in 0..n2 {
            let mut mass = 0.0;
            for (s, &bs) in b0.iter().enumerate() {
                mass += bs * msgs.beta_hat[(p * n2 + q) * ns + s];
            }
            num1[p] += pol.agent1.nu(p) * pol.agent2.nu(q) * mass;
            num2[q] += pol.agent1.nu(p) * pol.agent2.nu(q) * mass;
        }
    }
    (num1, num2)
}

/// Reach mass of agent `agent`'s node `n` under the weighted forward messages.
fn node_mass(msgs: &MessageSet, n1: usize, n2: usize, ns: usize, agent: usize, n: usize) -> f64 {
    let mut mass = 0.0;
    for p in 0..n1 {
        for q in 0..n2 {
            if (agent == 0 && p != n) || (agent == 1 && q != n) {
                continue;
            }
            for s in 0..ns {
                mass += msgs.alpha_hat[(p * n2 + q) * ns + s];
            }
        }
    }
    mass
}

/// Evidence that agent `agent` can reach node `nbar` *and* then receive
/// observation `obs`, ignoring rewards. Used to distinguish unreachable
/// node-transition rows from numerical failures.
fn transition_row_evidence(
    m: &DecPomdpModel,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    msgs: &MessageSet,
    agent: usize,
    nbar: usize,
    obs: usize,
) -> f64 {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let nz = d.obs[1];
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);
    let mut ev = 0.0;
    for p in 0..n1 {
        if agent == 0 && p != nbar {
            continue;
        }
        for q in 0..n2 {
            if agent == 1 && q != nbar {
                continue;
            }
            for s in 0..ns {
                let w = msgs.alpha_hat[(p * n2 + q) * ns + s];
                if w == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let pa = pol.agent1.pi(p, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for b in 0..nb {
                        let w_ab = w * pa * pol.agent2.pi(q, b);
                        if w_ab == 0.0 {
                            continue;
                        }
                        for &st in idx.forward(s, a, b) {
                            let st = st as usize;
                            let w_t = w_ab * m.t(s, a, b, st);
                            for &yz in idx.obs_support(st, a, b) {
                                let (y, z) = ((yz as usize) / nz, (yz as usize) % nz);
                                if (agent == 0 && y == obs) || (agent == 1 && z == obs) {
                                    ev += w_t * m.o(st, a, b, y, z);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ev
}

/// One full M-step: all six tables recomputed from the same message set and
/// swapped in together.
pub fn m_step(
    m: &DecPomdpModel,
    rhat: &NormalizedRewards,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    msgs: &MessageSet,
) -> Result<JointPolicy> {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);
    let (n1, n2) = (pol.agent1.nodes, pol.agent2.nodes);

    let (mut act1, mut act2) = action_numerators(m, rhat, idx, pol, msgs);
    let (mut tr1, mut tr2) = transition_numerators(m, idx, pol, msgs);
    let (mut nu1, mut nu2) = initial_numerators(pol, msgs, &m.start);

    for n in 0..n1 {
        renormalize_row(
            &mut act1[n * na..(n + 1) * na],
            &pol.agent1.action[n * na..(n + 1) * na],
            || node_mass(msgs, n1, n2, ns, 0, n),
            &format!("agent 1 action update, node {n}"),
        )?;
    }
    for n in 0..n2 {
        renormalize_row(
            &mut act2[n * nb..(n + 1) * nb],
            &pol.agent2.action[n * nb..(n + 1) * nb],
            || node_mass(msgs, n1, n2, ns, 1, n),
            &format!("agent 2 action update, node {n}"),
        )?;
    }
    for n in 0..n1 {
        for y in 0..ny {
            let row = (n * ny + y) * n1;
            renormalize_row(
                &mut tr1[row..row + n1],
                &pol.agent1.transition[row..row + n1],
                || transition_row_evidence(m, idx, pol, msgs, 0, n, y),
                &format!("agent 1 node-transition update, node {n}, obs {y}"),
            )?;
        }
    }
    for n in 0..n2 {
        for z in 0..nz {
            let row = (n * nz + z) * n2;
            renormalize_row(
                &mut tr2[row..row + n2],
                &pol.agent2.transition[row..row + n2],
                || transition_row_evidence(m, idx, pol, msgs, 1, n, z),
                &format!("agent 2 node-transition update, node {n}, obs {z}"),
            )?;
        }
    }
    renormalize_row(&mut nu1, &pol.agent1.start, || 0.0, "agent 1 initial-node update")?;
    renormalize_row(&mut nu2, &pol.agent2.start, || 0.0, "agent 2 initial-node update")?;

    Ok(JointPolicy {
        agent1: AgentFsc {
            nodes: n1,
            num_actions: na,
            num_obs: ny,
            action: act1,
            transition: tr1,
            start: nu1,
        },
        agent2: AgentFsc {
            nodes: n2,
            num_actions: nb,
            num_obs: nz,
            action: act2,
            transition: tr2,
            start: nu2,
        },
    })
}

/// The action update for one agent (0 or 1), returning the renormalized table.
pub fn update_actions(
    m: &DecPomdpModel,
    rhat: &NormalizedRewards,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    msgs: &MessageSet,
    agent: usize,
) -> Result<Vec<f64>> {
    let d = m.dims();
    let (num1, num2) = action_numerators(m, rhat, idx, pol, msgs);
    let (mut num, fsc, width) = if agent == 0 {
        (num1, &pol.agent1, d.actions[0])
    } else {
        (num2, &pol.agent2, d.actions[1])
    };
    for n in 0..fsc.nodes {
        renormalize_row(
            &mut num[n * width..(n + 1) * width],
            &fsc.action[n * width..(n + 1) * width],
            || node_mass(msgs, pol.agent1.nodes, pol.agent2.nodes, d.states, agent, n),
            &format!("agent {} action update, node {n}", agent + 1),
        )?;
    }
    Ok(num)
}

/// The node-transition update for one agent, returning the renormalized table.
pub fn update_node_transitions(
    m: &DecPomdpModel,
    idx: &SuccessorIndex,
    pol: &JointPolicy,
    msgs: &MessageSet,
    agent: usize,
) -> Result<Vec<f64>> {
    let d = m.dims();
    let (num1, num2) = transition_numerators(m, idx, pol, msgs);
    let (mut num, fsc, nobs) = if agent == 0 {
        (num1, &pol.agent1, d.obs[0])
    } else {
        (num2, &pol.agent2, d.obs[1])
    };
    let n = fsc.nodes;
    for node in 0..n {
        for o in 0..nobs {
            let row = (node * nobs + o) * n;
            renormalize_row(
                &mut num[row..row + n],
                &fsc.transition[row..row + n],
                || transition_row_evidence(m, idx, pol, msgs, agent, node, o),
                &format!("agent {} node-transition update, node {node}, obs {o}", agent + 1),
            )?;
        }
    }
    Ok(num)
}

/// The initial-node update for one agent, returning the renormalized vector.
pub fn update_initial(
    pol: &JointPolicy,
    msgs: &MessageSet,
    b0: &[f64],
    agent: usize,
) -> Result<Vec<f64>> {
    let (num1, num2) = initial_numerators(pol, msgs, b0);
    let (mut num, fsc) = if agent == 0 {
        (num1, &pol.agent1)
    } else {
        (num2, &pol.agent2)
    };
    renormalize_row(&mut num, &fsc.start, || 0.0, &format!("agent {} initial-node update", agent + 1))?;
    Ok(num)
}

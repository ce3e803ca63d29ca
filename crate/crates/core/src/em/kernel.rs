//! Sparse transition kernel of the joint chain over `(p, q, s)`.

use crate::controller::JointPolicy;
use crate::model::{DecPomdpModel, SuccessorIndex};

/// Row-sparse Markov kernel `P(p', q', s' | p, q, s)` induced by a model and
/// a controller pair: actions are marginalized under the action distributions,
/// states advance under the transition table, and node pairs advance under the
/// observation-driven controller transitions.
///
/// Joint states are flattened as `(p * n2 + q) * states + s`.
#[derive(Clone, Debug)]
pub struct JointKernel {
    pub n1: usize,
    pub n2: usize,
    pub states: usize,
    row_off: Vec<u32>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl JointKernel {
    #[inline]
    pub fn joint_dim(&self) -> usize {
        self.n1 * self.n2 * self.states
    }

    /// Sparse row `j`: parallel column/probability slices.
    #[inline]
    pub fn row(&self, j: usize) -> (&[u32], &[f64]) {
        let lo = self.row_off[j] as usize;
        let hi = self.row_off[j + 1] as usize;
        (&self.cols[lo..hi], &self.probs[lo..hi])
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Builds the kernel, iterating only over positive-probability entries.
    pub fn build(m: &DecPomdpModel, idx: &SuccessorIndex, pol: &JointPolicy) -> JointKernel {
        let d = m.dims();
        let (n1, n2, ns) = (pol.agent1.nodes, pol.agent2.nodes, d.states);
        let (na, nb) = (d.actions[0], d.actions[1]);
        let nz = d.obs[1];
        let joint = n1 * n2 * ns;

        let mut row_off = Vec::with_capacity(joint + 1);
        let mut cols: Vec<u32> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        row_off.push(0u32);

        // Dense accumulator reused across rows; `touched` tracks its support.
        let mut acc = vec![0.0f64; joint];
        let mut touched: Vec<u32> = Vec::with_capacity(64);

        for p in 0..n1 {
            for q in 0..n2 {
                for s in 0..ns {
                    for a in 0..na {
                        let pa = pol.agent1.pi(p, a);
                        if pa == 0.0 {
                            continue;
                        }
                        for b in 0..nb {
                            let w_ab = pa * pol.agent2.pi(q, b);
                            if w_ab == 0.0 {
                                continue;
                            }
                            for &s2 in idx.forward(s, a, b) {
                                let s2 = s2 as usize;
                                let w_t = w_ab * m.t(s, a, b, s2);
                                for &yz in idx.obs_support(s2, a, b) {
                                    let (y, z) = ((yz as usize) / nz, (yz as usize) % nz);
                                    let w_o = w_t * m.o(s2, a, b, y, z);
                                    for p2 in 0..n1 {
                                        let l1 = pol.agent1.lam(p, y, p2);
                                        if l1 == 0.0 {
                                            continue;
                                        }
                                        for q2 in 0..n2 {
                                            let l2 = pol.agent2.lam(q, z, q2);
                                            if l2 == 0.0 {
                                                continue;
                                            }
                                            let col = (p2 * n2 + q2) * ns + s2;
                                            if acc[col] == 0.0 {
                                                touched.push(col as u32);
                                            }
                                            acc[col] += w_o * l1 * l2;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    touched.sort_unstable();
                    for &col in &touched {
                        cols.push(col);
                        probs.push(acc[col as usize]);
                        acc[col as usize] = 0.0;
                    }
                    touched.clear();
                    row_off.push(cols.len() as u32);
                }
            }
        }

        JointKernel {
            n1,
            n2,
            states: ns,
            row_off,
            cols,
            probs,
        }
    }

    /// One forward step: `out[j'] = sum_j dist[j] * P(j' | j)`.
    pub fn apply_forward(&self, dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.joint_dim()];
        for (j, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (cols, probs) = self.row(j);
            for (c, p) in cols.iter().zip(probs) {
                out[*c as usize] += w * p;
            }
        }
        out
    }

    /// One backward step: `out[j] = sum_j' P(j' | j) * values[j']`.
    pub fn apply_backward(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.joint_dim()];
        for (o, j) in out.iter_mut().zip(0..self.joint_dim()) {
            let (cols, probs) = self.row(j);
            let mut sum = 0.0;
            for (c, p) in cols.iter().zip(probs) {
                sum += p * values[*c as usize];
            }
            *o = sum;
        }
        out
    }

    /// Row sums (1 for every reachable row of a stochastic kernel).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.joint_dim())
            .map(|j| self.row(j).1.iter().sum())
            .collect()
    }
}

//! Stochastic finite-state controllers.
//!
//! Each agent runs an FSC with a fixed number of nodes: an action-selection
//! distribution per node, a node-transition distribution per (node,
//! observation), and an initial node distribution. A [`JointPolicy`] pairs two
//! controllers, one per agent.

use crate::error::{Error, Result};
use crate::model::Dims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One agent's finite-state controller.
///
/// Layouts: `action[n][a]` = P(a | node n), `transition[n][o][n']` =
/// P(n' | node n, observation o), `start[n]` = P(initial node n).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentFsc {
    pub nodes: usize,
    pub num_actions: usize,
    pub num_obs: usize,
    pub action: Vec<f64>,
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
}

impl AgentFsc {
    /// P(a | n)
    #[inline]
    pub fn pi(&self, n: usize, a: usize) -> f64 {
        self.action[n * self.num_actions + a]
    }

    /// P(n' | n, o)
    #[inline]
    pub fn lam(&self, n: usize, o: usize, n2: usize) -> f64 {
        self.transition[(n * self.num_obs + o) * self.nodes + n2]
    }

    /// P(n) at time 0
    #[inline]
    pub fn nu(&self, n: usize) -> f64 {
        self.start[n]
    }

    fn validate(&self, agent: usize, num_actions: usize, num_obs: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPolicy(format!("agent {}: {msg}", agent + 1)));
        if self.nodes == 0 {
            return bad("controller needs at least one node".into());
        }
        if self.num_actions != num_actions || self.num_obs != num_obs {
            return bad(format!(
                "controller is over {} actions / {} observations, model has {num_actions} / {num_obs}",
                self.num_actions, self.num_obs
            ));
        }
        if self.action.len() != self.nodes * num_actions
            || self.transition.len() != self.nodes * num_obs * self.nodes
            || self.start.len() != self.nodes
        {
            return bad("table size mismatch".into());
        }
        let check_rows = |table: &[f64], row_len: usize, what: &str| -> Result<()> {
            for (i, row) in table.chunks(row_len).enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidPolicy(format!(
                        "agent {}: {what} row {i} is not a distribution (sum {sum})",
                        agent + 1
                    )));
                }
            }
            Ok(())
        };
        check_rows(&self.action, num_actions, "action")?;
        check_rows(&self.transition, self.nodes, "node-transition")?;
        check_rows(&self.start, self.nodes, "start")?;
        Ok(())
    }
}

/// A pair of finite-state controllers, one per agent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointPolicy {
    pub agent1: AgentFsc,
    pub agent2: AgentFsc,
}

impl JointPolicy {
    #[inline]
    pub fn agent(&self, i: usize) -> &AgentFsc {
        match i {
            0 => &self.agent1,
            1 => &self.agent2,
            _ => panic!("agent index must be 0 or 1"),
        }
    }

    /// Checks both controllers against the model dimensions.
    pub fn validate(&self, dims: &Dims) -> Result<()> {
        self.agent1.validate(0, dims.actions[0], dims.obs[0])?;
        self.agent2.validate(1, dims.actions[1], dims.obs[1])?;
        Ok(())
    }

    /// Number of joint latent states `(p, q, s)` for the given model.
    pub fn joint_dim(&self, dims: &Dims) -> usize {
        self.agent1.nodes * self.agent2.nodes * dims.states
    }
}

fn random_distribution(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    // A floor keeps every entry strictly positive so that EM's multiplicative
    // updates can reach any deterministic controller.
    let mut row: Vec<f64> = (0..len).map(|_| rng.gen::<f64>().max(1e-3)).collect();
    let sum: f64 = row.iter().sum();
    for p in row.iter_mut() {
        *p /= sum;
    }
    row
}

fn random_fsc(rng: &mut impl Rng, nodes: usize, num_actions: usize, num_obs: usize) -> AgentFsc {
    let mut action = Vec::with_capacity(nodes * num_actions);
    let mut transition = Vec::with_capacity(nodes * num_obs * nodes);
    for _ in 0..nodes {
        action.extend(random_distribution(rng, num_actions));
    }
    for _ in 0..nodes * num_obs {
        transition.extend(random_distribution(rng, nodes));
    }
    let start = random_distribution(rng, nodes);
    AgentFsc {
        nodes,
        num_actions,
        num_obs,
        action,
        transition,
        start,
    }
}

/// Draws a random fully-mixed controller pair; a pure function of its inputs.
pub fn init_random(dims: &Dims, n1: usize, n2: usize, seed: u64) -> JointPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent1 = random_fsc(&mut rng, n1, dims.actions[0], dims.obs[0]);
    let agent2 = random_fsc(&mut rng, n2, dims.actions[1], dims.obs[1]);
    JointPolicy { agent1, agent2 }
}

/// A deterministic controller given by index maps instead of distributions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeterministicFsc {
    pub start_node: usize,
    /// `action[n]` = action taken at node `n`.
    pub action: Vec<usize>,
    /// `next[n][o]` = successor node after observing `o` at node `n`.
    pub next: Vec<Vec<usize>>,
}

impl DeterministicFsc {
    fn materialize(&self, num_actions: usize, num_obs: usize) -> AgentFsc {
        let nodes = self.action.len();
        let mut fsc = AgentFsc {
            nodes,
            num_actions,
            num_obs,
            action: vec![0.0; nodes * num_actions],
            transition: vec![0.0; nodes * num_obs * nodes],
            start: vec![0.0; nodes],
        };
        fsc.start[self.start_node] = 1.0;
        for n in 0..nodes {
            fsc.action[n * num_actions + self.action[n]] = 1.0;
            for o in 0..num_obs {
                fsc.transition[(n * num_obs + o) * nodes + self.next[n][o]] = 1.0;
            }
        }
        fsc
    }
}

/// Builds a one-hot controller pair from deterministic specifications.
pub fn make_deterministic(dims: &Dims, a1: &DeterministicFsc, a2: &DeterministicFsc) -> JointPolicy {
    JointPolicy {
        agent1: a1.materialize(dims.actions[0], dims.obs[0]),
        agent2: a2.materialize(dims.actions[1], dims.obs[1]),
    }
}

/// On-disk policy representation with provenance metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub model_hash: String,
    pub seed: u64,
    pub iterations: usize,
    pub policy: JointPolicy,
}

impl PolicyFile {
    pub const FORMAT: &'static str = "fsc-pair-v1";

    pub fn new(policy: JointPolicy, model_hash: String, seed: u64, iterations: usize) -> Self {
        PolicyFile {
            format: Self::FORMAT.to_string(),
            model_hash,
            seed,
            iterations,
            policy,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pf: PolicyFile = serde_json::from_str(text)?;
        if pf.format != Self::FORMAT {
            return Err(Error::InvalidPolicy(format!(
                "unsupported policy format `{}`",
                pf.format
            )));
        }
        Ok(pf)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Content hash of a policy's tables, recorded in run logs.
pub fn policy_hash(policy: &JointPolicy) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serde_json::to_string(policy).expect("policy serializes").as_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(16);
    for b in &digest[..8] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

//! Two-agent DEC-POMDP model: tables, validation, reward normalization and
//! sparse successor indexing.

mod parse;

pub use parse::parse_dpomdp;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Table dimensions of a two-agent model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: [usize; 2],
    pub obs: [usize; 2],
}

impl Dims {
    /// Number of joint actions.
    pub fn joint_actions(&self) -> usize {
        self.actions[0] * self.actions[1]
    }

    /// Number of joint observations.
    pub fn joint_obs(&self) -> usize {
        self.obs[0] * self.obs[1]
    }
}

/// A two-agent DEC-POMDP with dense tables.
///
/// Layouts: `transition[s][a][b][s']`, `observation[s'][a][b][y][z]`,
/// `reward[s][a][b]`, where `a`/`y` belong to agent 1 and `b`/`z` to agent 2.
/// The observation table is conditioned on the *successor* state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecPomdpModel {
    pub name: String,
    pub discount: f64,
    pub state_names: Vec<String>,
    pub action_names: [Vec<String>; 2],
    pub obs_names: [Vec<String>; 2],
    /// Initial state distribution.
    pub start: Vec<f64>,
    pub transition: Vec<f64>,
    pub observation: Vec<f64>,
    pub reward: Vec<f64>,
}

impl DecPomdpModel {
    /// Creates a model with all-zero tables, to be filled in by a builder.
    pub fn zeroed(
        name: impl Into<String>,
        discount: f64,
        state_names: Vec<String>,
        action_names: [Vec<String>; 2],
        obs_names: [Vec<String>; 2],
    ) -> Self {
        let s = state_names.len();
        let a = action_names[0].len();
        let b = action_names[1].len();
        let y = obs_names[0].len();
        let z = obs_names[1].len();
        DecPomdpModel {
            name: name.into(),
            discount,
            state_names,
            action_names,
            obs_names,
            start: vec![0.0; s],
            transition: vec![0.0; s * a * b * s],
            observation: vec![0.0; s * a * b * y * z],
            reward: vec![0.0; s * a * b],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            states: self.state_names.len(),
            actions: [self.action_names[0].len(), self.action_names[1].len()],
            obs: [self.obs_names[0].len(), self.obs_names[1].len()],
        }
    }

    #[inline]
    fn tix(&self, s: usize, a: usize, b: usize, s2: usize) -> usize {
        let d = self.dims();
        ((s * d.actions[0] + a) * d.actions[1] + b) * d.states + s2
    }

    #[inline]
    fn oix(&self, s2: usize, a: usize, b: usize, y: usize, z: usize) -> usize {
        let d = self.dims();
        (((s2 * d.actions[0] + a) * d.actions[1] + b) * d.obs[0] + y) * d.obs[1] + z
    }

    #[inline]
    fn rix(&self, s: usize, a: usize, b: usize) -> usize {
        let d = self.dims();
        (s * d.actions[0] + a) * d.actions[1] + b
    }

    /// P(s' | s, a, b)
    #[inline]
    pub fn t(&self, s: usize, a: usize, b: usize, s2: usize) -> f64 {
        self.transition[self.tix(s, a, b, s2)]
    }

    /// P(y, z | s', a, b)
    #[inline]
    pub fn o(&self, s2: usize, a: usize, b: usize, y: usize, z: usize) -> f64 {
        self.observation[self.oix(s2, a, b, y, z)]
    }

    /// R(s, a, b)
    #[inline]
    pub fn r(&self, s: usize, a: usize, b: usize) -> f64 {
        self.reward[self.rix(s, a, b)]
    }

    pub fn set_t(&mut self, s: usize, a: usize, b: usize, s2: usize, p: f64) {
        let i = self.tix(s, a, b, s2);
        self.transition[i] = p;
    }

    pub fn set_o(&mut self, s2: usize, a: usize, b: usize, y: usize, z: usize, p: f64) {
        let i = self.oix(s2, a, b, y, z);
        self.observation[i] = p;
    }

    pub fn set_r(&mut self, s: usize, a: usize, b: usize, v: f64) {
        let i = self.rix(s, a, b);
        self.reward[i] = v;
    }

    /// Loads and validates a model from `.dpomdp` text.
    pub fn from_dpomdp_str(text: &str) -> Result<Self> {
        let mut m = parse_dpomdp(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Loads and validates a model from a `.dpomdp` file.
    pub fn from_dpomdp_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut m = parse_dpomdp(&text)?;
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            m.name = stem.to_string();
        }
        m.validate()?;
        Ok(m)
    }

    /// Checks shapes, finiteness and stochasticity; rows whose sums deviate
    /// from 1 by at most `ROW_SUM_TOL` are renormalized exactly, larger
    /// deviations are rejected.
    pub fn validate(&mut self) -> Result<ValidationReport> {
        const ROW_SUM_TOL: f64 = 1e-9;
        let d = self.dims();
        if d.states == 0 || d.actions[0] == 0 || d.actions[1] == 0 || d.obs[0] == 0 || d.obs[1] == 0
        {
            return Err(Error::InvalidModel(
                "every dimension must be nonempty".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidModel(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if self.start.len() != d.states
            || self.transition.len() != d.states * d.joint_actions() * d.states
            || self.observation.len() != d.states * d.joint_actions() * d.joint_obs()
            || self.reward.len() != d.states * d.joint_actions()
        {
            return Err(Error::InvalidModel("table size mismatch".into()));
        }
        if self.reward.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("reward table contains NaN/Inf".into()));
        }

        let mut report = ValidationReport::default();
        normalize_rows_in_place(
            &mut self.start,
            d.states,
            ROW_SUM_TOL,
            &mut report,
            |_| "start distribution".to_string(),
        )?;
        let (na, nb, ns) = (d.actions[0], d.actions[1], d.states);
        normalize_rows_in_place(&mut self.transition, ns, ROW_SUM_TOL, &mut report, |row| {
            let s = row / (na * nb);
            let a = row / nb % na;
            let b = row % nb;
            format!("transition row (s={s}, a={a}, b={b})")
        })?;
        let njo = d.joint_obs();
        normalize_rows_in_place(&mut self.observation, njo, ROW_SUM_TOL, &mut report, |row| {
            let s2 = row / (na * nb);
            let a = row / nb % na;
            let b = row % nb;
            format!("observation row (s'={s2}, a={a}, b={b})")
        })?;
        Ok(report)
    }

    /// Affinely rescales rewards into `[0, 1]`.
    pub fn normalize_rewards(&self) -> NormalizedRewards {
        let mut r_min = f64::INFINITY;
        let mut r_max = f64::NEG_INFINITY;
        for &v in &self.reward {
            r_min = r_min.min(v);
            r_max = r_max.max(v);
        }
        let degenerate = r_max == r_min;
        let r_hat = if degenerate {
            vec![0.0; self.reward.len()]
        } else {
            let w = r_max - r_min;
            self.reward.iter().map(|&v| (v - r_min) / w).collect()
        };
        NormalizedRewards {
            r_hat,
            r_min,
            r_max,
            degenerate,
        }
    }

    /// Builds the sparse successor index over positive-probability entries.
    pub fn successor_index(&self) -> SuccessorIndex {
        SuccessorIndex::build(self)
    }

    /// Short content hash of the canonical text form (name-independent),
    /// for provenance metadata.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dpomdp_body().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// Serializes the model back to `.dpomdp` text (explicit-entry form).
    pub fn to_dpomdp_string(&self) -> String {
        format!("# {}\n{}", self.name, self.dpomdp_body())
    }

    fn dpomdp_body(&self) -> String {
        let d = self.dims();
        let mut out = String::new();
        out.push_str("agents: 2\n");
        out.push_str(&format!("discount: {}\n", self.discount));
        out.push_str("values: reward\n");
        out.push_str(&format!("states: {}\n", self.state_names.join(" ")));
        out.push_str("actions:\n");
        out.push_str(&format!("{}\n", self.action_names[0].join(" ")));
        out.push_str(&format!("{}\n", self.action_names[1].join(" ")));
        out.push_str("observations:\n");
        out.push_str(&format!("{}\n", self.obs_names[0].join(" ")));
        out.push_str(&format!("{}\n", self.obs_names[1].join(" ")));
        let start_strs: Vec<String> = self.start.iter().map(|p| format!("{p}")).collect();
        out.push_str(&format!("start: {}\n", start_strs.join(" ")));
        out.push('\n');
        for a in 0..d.actions[0] {
            for b in 0..d.actions[1] {
                let (an, bn) = (&self.action_names[0][a], &self.action_names[1][b]);
                for s in 0..d.states {
                    for s2 in 0..d.states {
                        let p = self.t(s, a, b, s2);
                        if p != 0.0 {
                            out.push_str(&format!(
                                "T: {an} {bn} : {} : {} : {p}\n",
                                self.state_names[s], self.state_names[s2]
                            ));
                        }
                    }
                }
            }
        }
        out.push('\n');
        for a in 0..d.actions[0] {
            for b in 0..d.actions[1] {
                let (an, bn) = (&self.action_names[0][a], &self.action_names[1][b]);
                for s2 in 0..d.states {
                    for y in 0..d.obs[0] {
                        for z in 0..d.obs[1] {
                            let p = self.o(s2, a, b, y, z);
                            if p != 0.0 {
                                out.push_str(&format!(
                                    "O: {an} {bn} : {} : {} {} : {p}\n",
                                    self.state_names[s2],
                                    self.obs_names[0][y],
                                    self.obs_names[1][z]
                                ));
                            }
                        }
                    }
                }
            }
        }
        out.push('\n');
        for a in 0..d.actions[0] {
            for b in 0..d.actions[1] {
                let (an, bn) = (&self.action_names[0][a], &self.action_names[1][b]);
                for s in 0..d.states {
                    let v = self.r(s, a, b);
                    if v != 0.0 {
                        out.push_str(&format!(
                            "R: {an} {bn} : {} : * : * : {v}\n",
                            self.state_names[s]
                        ));
                    }
                }
            }
        }
        out
    }
}

/// Outcome of model validation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ValidationReport {
    /// Number of probability rows that needed exact renormalization.
    pub renormalized_rows: usize,
    /// Largest `|sum - 1|` observed before renormalization.
    pub max_row_deviation: f64,
}

fn normalize_rows_in_place(
    table: &mut [f64],
    row_len: usize,
    tol: f64,
    report: &mut ValidationReport,
    describe: impl Fn(usize) -> String,
) -> Result<()> {
    for (row, chunk) in table.chunks_mut(row_len).enumerate() {
        let mut sum = 0.0;
        for &p in chunk.iter() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "{} contains an invalid probability {p}",
                    describe(row)
                )));
            }
            sum += p;
        }
        let dev = (sum - 1.0).abs();
        if dev > tol {
            return Err(Error::InvalidModel(format!(
                "{} sums to {sum}, which deviates from 1 by more than {tol}",
                describe(row)
            )));
        }
        report.max_row_deviation = report.max_row_deviation.max(dev);
        if dev > 0.0 {
            report.renormalized_rows += 1;
            for p in chunk.iter_mut() {
                *p /= sum;
            }
        }
    }
    Ok(())
}

/// Rewards rescaled affinely to `[0, 1]`.
///
/// `r_hat = (R - r_min) / (r_max - r_min)`; when all rewards are equal the
/// rescaled table is identically zero and `degenerate` is set.
#[derive(Clone, Debug)]
pub struct NormalizedRewards {
    pub r_hat: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub degenerate: bool,
}

impl NormalizedRewards {
    #[inline]
    pub fn get(&self, d: &Dims, s: usize, a: usize, b: usize) -> f64 {
        self.r_hat[(s * d.actions[0] + a) * d.actions[1] + b]
    }
}

/// Sparse index over positive-probability transitions and observations.
///
/// `successors(s, a, b, y, z)` lists the states `s'` with
/// `P(s'|s,a,b) * P(y,z|s',a,b) > 0`; `forward(s, a, b)` lists `s'` with
/// `P(s'|s,a,b) > 0`; `obs_support(s', a, b)` lists the joint observations
/// `y * |Z| + z` with `P(y,z|s',a,b) > 0`.
#[derive(Clone, Debug)]
pub struct SuccessorIndex {
    dims: Dims,
    fwd_off: Vec<u32>,
    fwd: Vec<u32>,
    obs_off: Vec<u32>,
    obs: Vec<u32>,
    full_off: Vec<u32>,
    full: Vec<u32>,
    /// Largest successor-set size over all `(s, a, b, y, z)`.
    pub max_successors: usize,
}

impl SuccessorIndex {
    fn build(m: &DecPomdpModel) -> SuccessorIndex {
        let d = m.dims();
        let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
        let (ny, nz) = (d.obs[0], d.obs[1]);

        let mut fwd_off = Vec::with_capacity(ns * na * nb + 1);
        let mut fwd = Vec::new();
        fwd_off.push(0u32);
        for s in 0..ns {
            for a in 0..na {
                for b in 0..nb {
                    for s2 in 0..ns {
                        if m.t(s, a, b, s2) > 0.0 {
                            fwd.push(s2 as u32);
                        }
                    }
                    fwd_off.push(fwd.len() as u32);
                }
            }
        }

        let mut obs_off = Vec::with_capacity(ns * na * nb + 1);
        let mut obs = Vec::new();
        obs_off.push(0u32);
        for s2 in 0..ns {
            for a in 0..na {
                for b in 0..nb {
                    for y in 0..ny {
                        for z in 0..nz {
                            if m.o(s2, a, b, y, z) > 0.0 {
                                obs.push((y * nz + z) as u32);
                            }
                        }
                    }
                    obs_off.push(obs.len() as u32);
                }
            }
        }

        let mut full_off = Vec::with_capacity(ns * na * nb * ny * nz + 1);
        let mut full = Vec::new();
        let mut max_successors = 0usize;
        full_off.push(0u32);
        for s in 0..ns {
            for a in 0..na {
                for b in 0..nb {
                    for y in 0..ny {
                        for z in 0..nz {
                            let before = full.len();
                            for s2 in 0..ns {
                                if m.t(s, a, b, s2) > 0.0 && m.o(s2, a, b, y, z) > 0.0 {
                                    full.push(s2 as u32);
                                }
                            }
                            max_successors = max_successors.max(full.len() - before);
                            full_off.push(full.len() as u32);
                        }
                    }
                }
            }
        }

        SuccessorIndex {
            dims: d,
            fwd_off,
            fwd,
            obs_off,
            obs,
            full_off,
            full,
            max_successors,
        }
    }

    /// States reachable from `(s, a, b)` under the transition table.
    #[inline]
    pub fn forward(&self, s: usize, a: usize, b: usize) -> &[u32] {
        let d = &self.dims;
        let i = (s * d.actions[0] + a) * d.actions[1] + b;
        &self.fwd[self.fwd_off[i] as usize..self.fwd_off[i + 1] as usize]
    }

    /// Joint observations `y * |Z| + z` with positive probability at `(s', a, b)`.
    #[inline]
    pub fn obs_support(&self, s2: usize, a: usize, b: usize) -> &[u32] {
        let d = &self.dims;
        let i = (s2 * d.actions[0] + a) * d.actions[1] + b;
        &self.obs[self.obs_off[i] as usize..self.obs_off[i + 1] as usize]
    }

    /// States `s'` consistent with taking `(a, b)` in `s` and observing `(y, z)`.
    #[inline]
    pub fn successors(&self, s: usize, a: usize, b: usize, y: usize, z: usize) -> &[u32] {
        let d = &self.dims;
        let i = (((s * d.actions[0] + a) * d.actions[1] + b) * d.obs[0] + y) * d.obs[1] + z;
        &self.full[self.full_off[i] as usize..self.full_off[i + 1] as usize]
    }
}

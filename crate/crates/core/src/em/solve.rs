//! The EM driver: iterate E-step message building and M-step updates, with
//! per-iteration logging, convergence checks, and seeded random restarts.

use crate::controller::{init_random, policy_hash, JointPolicy};
use crate::em::messages::{build_messages, value_from_likelihood, CutoffMode, MessageSet};
use crate::em::updates::m_step;
use crate::em::JointKernel;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_exact;
use crate::model::{DecPomdpModel, NormalizedRewards, SuccessorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Solver configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmConfig {
    /// Maximum number of M-steps.
    pub max_iters: usize,
    /// Relative likelihood-change tolerance for convergence.
    pub lik_tol: f64,
    /// Horizon-mixture truncation rule.
    pub cutoff: CutoffMode,
    /// Audit the exact value every this many iterations (the final iterate is
    /// always audited).
    pub audit_every: Option<usize>,
    /// Tolerance handed to exact evaluation when auditing.
    pub eval_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 1000,
            lik_tol: 1e-8,
            cutoff: CutoffMode::default(),
            audit_every: None,
            eval_tol: 1e-9,
        }
    }
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The relative likelihood change dropped below `lik_tol`.
    Converged,
    /// `max_iters` M-steps were performed.
    MaxIters,
    /// All rewards are equal, so every policy is optimal and EM has no
    /// gradient; the initial policy is returned unchanged.
    DegenerateReward,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::Converged => "converged",
            StopReason::MaxIters => "max_iters",
            StopReason::DegenerateReward => "degenerate_reward",
        };
        f.write_str(s)
    }
}

/// One logged EM iteration. Iteration 0 describes the initial policy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmIterRecord {
    pub iter: usize,
    pub likelihood: f64,
    /// Value implied by the likelihood via the affine reward map.
    pub value_mapped: f64,
    /// Exact value, present on audited iterations.
    pub value_exact: Option<f64>,
    /// Wall-clock milliseconds spent on this iteration.
    pub ms: f64,
}

/// Full log of one EM run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmRunLog {
    pub records: Vec<EmIterRecord>,
    pub stop: StopReason,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub final_likelihood: f64,
    pub final_value_exact: f64,
    /// Horizon the message propagation settled on.
    pub final_cutoff: usize,
    pub policy_hash: String,
    pub warning: Option<String>,
}

impl EmRunLog {
    /// One JSON object per line: every iteration record, then a final summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        let tail = serde_json::json!({
            "final": true,
            "stop": self.stop,
            "iterations": self.iterations,
            "likelihood": self.final_likelihood,
            "value_exact": self.final_value_exact,
            "cutoff": self.final_cutoff,
            "policy_hash": self.policy_hash,
            "warning": self.warning,
        });
        out.push_str(&tail.to_string());
        out.push('\n');
        out
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn timer() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn timer() -> Option<std::time::Instant> {
    None
}

fn elapsed_ms(start: Option<std::time::Instant>) -> f64 {
    start.map(|t| t.elapsed().as_secs_f64() * 1e3).unwrap_or(0.0)
}

/// Incremental EM on one initial policy; `step` performs one M-step + E-step.
pub struct EmState {
    model: Arc<DecPomdpModel>,
    idx: Arc<SuccessorIndex>,
    rhat: NormalizedRewards,
    cfg: EmConfig,
    policy: JointPolicy,
    msgs: Option<MessageSet>,
    records: Vec<EmIterRecord>,
    iterations: usize,
    prev_lik: f64,
    cutoff_floor: usize,
    done: Option<StopReason>,
    warning: Option<String>,
}

impl EmState {
    pub fn new(model: Arc<DecPomdpModel>, initial: JointPolicy, cfg: EmConfig) -> Result<EmState> {
        let idx = Arc::new(model.successor_index());
        Self::with_index(model, idx, initial, cfg)
    }

    pub fn with_index(
        model: Arc<DecPomdpModel>,
        idx: Arc<SuccessorIndex>,
        initial: JointPolicy,
        cfg: EmConfig,
    ) -> Result<EmState> {
        let d = model.dims();
        initial.validate(&d)?;
        let rhat = model.normalize_rewards();
        let mut state = EmState {
            model,
            idx,
            rhat,
            cfg,
            policy: initial,
            msgs: None,
            records: Vec::new(),
            iterations: 0,
            prev_lik: 0.0,
            cutoff_floor: 0,
            done: None,
            warning: None,
        };
        let start = timer();
        if state.rhat.degenerate {
            // Every policy earns the same value; there is nothing to optimize.
            state.done = Some(StopReason::DegenerateReward);
            state.warning = Some(format!(
                "all rewards equal {}; every policy is optimal, returning the initial one",
                state.rhat.r_min
            ));
            state.records.push(EmIterRecord {
                iter: 0,
                likelihood: 0.0,
                value_mapped: value_from_likelihood(0.0, &state.rhat, state.model.discount),
                value_exact: None,
                ms: elapsed_ms(start),
            });
            return Ok(state);
        }
        let kernel = JointKernel::build(&state.model, &state.idx, &state.policy);
        let msgs = build_messages(
            &kernel,
            &state.policy,
            &state.model,
            &state.rhat,
            state.cfg.cutoff,
            None,
        );
        if !msgs.likelihood.is_finite() {
            return Err(Error::Numerical(format!(
                "initial likelihood is {}",
                msgs.likelihood
            )));
        }
        state.prev_lik = msgs.likelihood;
        state.cutoff_floor = msgs.cutoff;
        let mut rec = EmIterRecord {
            iter: 0,
            likelihood: msgs.likelihood,
            value_mapped: value_from_likelihood(msgs.likelihood, &state.rhat, state.model.discount),
            value_exact: None,
            ms: elapsed_ms(start),
        };
        if state.audit_now(0) {
            rec.value_exact = Some(evaluate_exact(&state.model, &state.policy, state.cfg.eval_tol)?.v_b0);
        }
        state.records.push(rec);
        state.msgs = Some(msgs);
        Ok(state)
    }

    fn audit_now(&self, iter: usize) -> bool {
        matches!(self.cfg.audit_every, Some(j) if j > 0 && iter % j == 0)
    }

    pub fn policy(&self) -> &JointPolicy {
        &self.policy
    }

    pub fn records(&self) -> &[EmIterRecord] {
        &self.records
    }

    pub fn done(&self) -> Option<StopReason> {
        self.done
    }

    pub fn likelihood(&self) -> f64 {
        self.prev_lik
    }

    /// Performs one EM iteration; returns the new record, or `None` once the
    /// run has stopped.
    pub fn step(&mut self) -> Result<Option<EmIterRecord>> {
        if self.done.is_some() {
            return Ok(None);
        }
        if self.iterations >= self.cfg.max_iters {
            self.done = Some(StopReason::MaxIters);
            return Ok(None);
        }
        let start = timer();
        let msgs = self.msgs.as_ref().expect("messages exist while running");
        let next = m_step(&self.model, &self.rhat, &self.idx, &self.policy, msgs)?;
        let kernel = JointKernel::build(&self.model, &self.idx, &next);
        // Keeping the horizon monotone within a run means later iterations can
        // only add (nonnegative) horizon mass, so reported likelihoods stay
        // comparable across iterations.
        let msgs = build_messages(
            &kernel,
            &next,
            &self.model,
            &self.rhat,
            self.cfg.cutoff,
            Some(self.cutoff_floor),
        );
        if !msgs.likelihood.is_finite() {
            return Err(Error::Numerical(format!(
                "likelihood became {} at iteration {}",
                msgs.likelihood,
                self.iterations + 1
            )));
        }
        self.policy = next;
        self.iterations += 1;
        self.cutoff_floor = self.cutoff_floor.max(msgs.cutoff);
        let lik = msgs.likelihood;
        let mut rec = EmIterRecord {
            iter: self.iterations,
            likelihood: lik,
            value_mapped: value_from_likelihood(lik, &self.rhat, self.model.discount),
            value_exact: None,
            ms: elapsed_ms(start),
        };
        if self.audit_now(self.iterations) {
            rec.value_exact = Some(evaluate_exact(&self.model, &self.policy, self.cfg.eval_tol)?.v_b0);
        }
        self.records.push(rec);
        self.msgs = Some(msgs);
        if (lik - self.prev_lik).abs() <= self.cfg.lik_tol * self.prev_lik.abs().max(1e-12) {
            self.done = Some(StopReason::Converged);
        }
        self.prev_lik = lik;
        Ok(Some(rec))
    }

    /// Runs to completion and audits the final policy.
    pub fn finish(mut self) -> Result<(JointPolicy, EmRunLog)> {
        while self.step()?.is_some() {}
        let stop = self.done.unwrap_or(StopReason::MaxIters);
        let final_value_exact = evaluate_exact(&self.model, &self.policy, self.cfg.eval_tol)?.v_b0;
        if let Some(last) = self.records.last_mut() {
            last.value_exact = Some(final_value_exact);
        }
        let log = EmRunLog {
            iterations: self.iterations,
            final_likelihood: self.prev_lik,
            final_value_exact,
            final_cutoff: self.cutoff_floor,
            policy_hash: policy_hash(&self.policy),
            warning: self.warning.take(),
            stop,
            records: std::mem::take(&mut self.records),
        };
        Ok((self.policy, log))
    }
}

/// Runs EM from the given initial policy until convergence, iteration budget,
/// or degenerate rewards.
pub fn em_solve(
    m: &DecPomdpModel,
    initial: JointPolicy,
    cfg: &EmConfig,
) -> Result<(JointPolicy, EmRunLog)> {
    EmState::new(Arc::new(m.clone()), initial, *cfg)?.finish()
}

/// One restart's result.
#[derive(Clone, Debug)]
pub struct RestartRun {
    pub restart: usize,
    pub seed: u64,
    pub policy: JointPolicy,
    pub log: EmRunLog,
}

/// All restarts plus the index of the best run by audited exact value.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub runs: Vec<RestartRun>,
    pub best: usize,
}

impl SolveOutcome {
    pub fn best_run(&self) -> &RestartRun {
        &self.runs[self.best]
    }
}

/// Runs `restarts` independent EM runs from seeded random initial controllers
/// and picks the best by audited exact value. Restart seeds derive from
/// `seed`, so outcomes are reproducible regardless of thread count.
pub fn solve_restarts(
    m: &DecPomdpModel,
    n1: usize,
    n2: usize,
    restarts: usize,
    seed: u64,
    cfg: &EmConfig,
) -> Result<SolveOutcome> {
    if restarts == 0 {
        return Err(Error::InvalidPolicy("need at least one restart".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidPolicy("controllers need at least one node".into()));
    }
    let dims = m.dims();
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..restarts).map(|_| seed_rng.gen()).collect();
    let model = Arc::new(m.clone());
    let idx = Arc::new(m.successor_index());

    let runs: Vec<RestartRun> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let initial = init_random(&dims, n1, n2, seeds[i]);
            let state = EmState::with_index(model.clone(), idx.clone(), initial, *cfg)?;
            let (policy, log) = state.finish()?;
            Ok(RestartRun {
                restart: i,
                seed: seeds[i],
                policy,
                log,
            })
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.log.final_value_exact > runs[best].log.final_value_exact {
            best = i;
        }
    }
    Ok(SolveOutcome { runs, best })
}

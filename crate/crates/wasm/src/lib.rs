//! Browser bindings for the DEC-POMDP solver.
//!
//! A [`DemoSession`] wraps one incremental EM run on a bundled problem and
//! exposes three interactive operations: stepping the optimization, exact
//! policy evaluation, and Monte-Carlo simulation. Every method returns plain
//! JSON text so the page needs no generated glue beyond the module itself,
//! and so the whole API can be exercised natively by `cargo test`.

use std::sync::Arc;

use decpomdp::controller::{init_random, policy_hash, PolicyFile};
use decpomdp::em::{EmConfig, EmState};
use decpomdp::evaluation::{evaluate_exact, simulate};
use decpomdp::model::DecPomdpModel;
use wasm_bindgen::prelude::*;

/// Instances small enough to solve live in a browser tab.
const PROBLEMS: &[(&str, &str)] = &[
    ("dectiger", include_str!("../../../benchmarks/dectiger.dpomdp")),
    ("broadcast", include_str!("../../../benchmarks/broadcast.dpomdp")),
    ("recycling", include_str!("../../../benchmarks/recycling.dpomdp")),
    ("grid_small", include_str!("../../../benchmarks/grid_small.dpomdp")),
];

/// Names of the bundled problems, as a JSON array.
#[wasm_bindgen]
pub fn problems() -> String {
    let names: Vec<&str> = PROBLEMS.iter().map(|(n, _)| *n).collect();
    serde_json::to_string(&names).expect("names serialize")
}

fn lookup(problem: &str) -> Result<DecPomdpModel, String> {
    let (_, text) = PROBLEMS
        .iter()
        .find(|(n, _)| *n == problem)
        .ok_or_else(|| format!("unknown problem `{problem}`; see problems()"))?;
    DecPomdpModel::from_dpomdp_str(text)
        .map(|mut m| {
            m.name = problem.to_string();
            m
        })
        .map_err(|e| e.to_string())
}

/// One incremental EM run on a bundled problem.
#[wasm_bindgen]
pub struct DemoSession {
    model: Arc<DecPomdpModel>,
    state: EmState,
    seed: u64,
}

#[wasm_bindgen]
impl DemoSession {
    /// Starts a run from a seeded random controller pair.
    #[wasm_bindgen(constructor)]
    pub fn new(problem: &str, n1: usize, n2: usize, seed: u64) -> Result<DemoSession, String> {
        if n1 == 0 || n2 == 0 {
            return Err("controllers need at least one node".into());
        }
        if n1 > 10 || n2 > 10 {
            return Err("demo caps controllers at 10 nodes".into());
        }
        let model = Arc::new(lookup(problem)?);
        let initial = init_random(&model.dims(), n1, n2, seed);
        let state = EmState::new(model.clone(), initial, EmConfig::default())
            .map_err(|e| e.to_string())?;
        Ok(DemoSession { model, state, seed })
    }

    /// Runs up to `iters` more EM iterations and returns the records produced
    /// by this call as a JSON array of
    /// `{iter, likelihood, value_mapped, done}`. An empty array means the run
    /// already converged.
    pub fn step(&mut self, iters: usize) -> Result<String, String> {
        let mut out: Vec<serde_json::Value> = Vec::new();
        for _ in 0..iters {
            match self.state.step().map_err(|e| e.to_string())? {
                Some(rec) => out.push(serde_json::json!({
                    "iter": rec.iter,
                    "likelihood": rec.likelihood,
                    "value_mapped": rec.value_mapped,
                    "done": self.state.done().map(|s| s.to_string()),
                })),
                None => break,
            }
        }
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }

    /// The record of the initial controller (iteration 0), so plots can start
    /// from the untouched random policy.
    pub fn initial_record(&self) -> String {
        let rec = &self.state.records()[0];
        serde_json::json!({
            "iter": rec.iter,
            "likelihood": rec.likelihood,
            "value_mapped": rec.value_mapped,
        })
        .to_string()
    }

    /// Exactly evaluates the current controller pair:
    /// `{value, residual, iterations, method}`.
    pub fn evaluate(&self) -> Result<String, String> {
        let vt = evaluate_exact(&self.model, self.state.policy(), 1e-9)
            .map_err(|e| e.to_string())?;
        Ok(serde_json::json!({
            "value": vt.v_b0,
            "residual": vt.residual,
            "iterations": vt.iterations,
            "method": format!("{:?}", vt.method),
        })
        .to_string())
    }

    /// Monte-Carlo estimate of the current controller pair under
    /// decentralized execution: `{mean, std_error, episodes, horizon}`.
    pub fn simulate(&self, episodes: usize, seed: u64) -> Result<String, String> {
        let est = simulate(&self.model, self.state.policy(), episodes, None, seed)
            .map_err(|e| e.to_string())?;
        Ok(serde_json::json!({
            "mean": est.mean,
            "std_error": est.std_error,
            "episodes": est.episodes,
            "horizon": est.horizon,
            "bias_bound": est.bias_bound,
        })
        .to_string())
    }

    /// The current controller pair in the same JSON format the command-line
    /// solver writes.
    pub fn policy_json(&self) -> Result<String, String> {
        let iterations = self.state.records().last().map_or(0, |r| r.iter);
        PolicyFile::new(
            self.state.policy().clone(),
            self.model.content_hash(),
            self.seed,
            iterations,
        )
        .to_json()
        .map_err(|e| e.to_string())
    }

    /// Short fingerprint of the current controller pair.
    pub fn policy_fingerprint(&self) -> String {
        policy_hash(self.state.policy())
    }

    /// Problem dimensions: `{states, actions, observations, discount}`.
    pub fn model_info(&self) -> String {
        let d = self.model.dims();
        serde_json::json!({
            "problem": self.model.name,
            "states": d.states,
            "actions": [d.actions[0], d.actions[1]],
            "observations": [d.obs[0], d.obs[1]],
            "discount": self.model.discount,
        })
        .to_string()
    }
}

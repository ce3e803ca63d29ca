//! Planning as inference: the joint-chain kernel, forward/backward messages
//! over the mixture of finite-horizon networks, the multiplicative parameter
//! updates, and the EM driver with restarts.

mod kernel;
pub(crate) mod messages;
mod solve;
mod updates;

pub use kernel::JointKernel;
pub use messages::{
    backward_messages, backward_messages_raw, build_messages, forward_messages, hard_cap,
    value_from_likelihood, CutoffMode, MessageSet,
};
pub use solve::{
    em_solve, solve_restarts, EmConfig, EmIterRecord, EmRunLog, EmState, RestartRun, SolveOutcome,
    StopReason,
};
pub use updates::{m_step, update_actions, update_initial, update_node_transitions};

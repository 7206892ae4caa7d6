//! Deterministic SDN flow-table simulator with reinforcement-learning agents
//! that tune rule-placement thresholds.

pub mod agent_dqn;
pub mod agent_q;
pub mod baselines;
pub mod harness;
pub mod model;
pub mod simnet;
pub mod traffic;

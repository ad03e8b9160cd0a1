//! Symbolic Alchemy workbench: the task, exact Bayesian and heuristic
//! baselines, the A2C EPN agent with its autodiff core, and the behavioral
//! and single-unit analysis suite.

pub mod analysis;
pub mod baselines;
pub mod chemistry;
pub mod environment;
pub mod interface;
pub mod neural;
pub mod par;
pub mod training;

pub use chemistry::{Chemistry, GenConfig, LatentVertex, PerceptState, PotionColor};
pub use environment::{Action, EnvConfig, Environment, EpisodeTrace, StepRecord};

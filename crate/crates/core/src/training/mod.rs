//! A2C training of the EPN agent and its evaluation.

pub mod a2c;
mod config;
mod eval;
mod train;

pub use a2c::{n_step_returns, n_step_returns_masked};
pub use config::{ConfigError, EvalConfig, NetConfig, TrainConfig, TrainFile};
pub use eval::{eval_seeds, evaluate, evaluate_on, reward_input, EpnPolicy, EvalError, EvalReport, ScoreStats};
pub use train::{train, train_from, MetricsLog, MetricsRow, TrainError, TrainOutcome, METRICS_HEADER};

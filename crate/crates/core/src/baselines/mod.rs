//! Exact Bayesian Ideal Observer and the Random Heuristic reference policy.

mod belief;
mod ideal;
mod planner;
mod random;

pub use belief::{init_belief, BeliefError, BeliefMarginals, BeliefState, ObservationEvent, DEFAULT_HYPOTHESIS_CAP};
pub use ideal::{ideal_observer_act, IdealConfig, IdealObserver};
pub use planner::{hypothesis_value, plan, Plan, PlanStone};
pub use random::{random_heuristic_act, RandomHeuristic};

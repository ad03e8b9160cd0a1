//! Autodiff core and the EPN agent network.

pub mod checkpoint;
mod graph;
mod memory;
mod model;
mod params;
mod tensor;

pub use graph::{GradError, Gradients, Graph, Var, LN_EPS};
pub use memory::{entry_width, memory_entry, EpisodicMemory, MEMORY_CAPACITY, MODIFIED_ENTRY_WIDTH};
pub use model::{sample_action, AgentState, Epn, EpnDims, ForwardTrace, SampleMode, StepOutput, StepVars, PARAM_NAMES};
pub use params::ParamStore;
pub use tensor::{Real, ShapeError, Tensor};

//! Trace persistence, evaluation-set generation and interactive sessions.

mod eval_set;
mod session;
mod trace_io;

pub use eval_set::{generate_eval_set, EvalEpisode, EvalManifest, MANIFEST_VERSION};
pub use session::{ActionRequest, Session, SessionError, SessionMode, SessionState, StepView, StoneInfo};
pub use trace_io::{
    activation_path, belief_path, list_trace_ids, load_bundle, load_dir, load_trace, read_rows, read_trace,
    save_run, trace_from_str, trace_path, trace_to_string, valid_id, write_rows, write_trace, TraceBundle,
    TraceIoError, ACTIVATION_SUFFIX, BELIEF_SUFFIX, TRACE_EXT,
};

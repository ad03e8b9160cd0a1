//! Command-line tool and HTTP service for the Symbolic Alchemy workbench.

pub mod cli;
pub mod server;

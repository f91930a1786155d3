//! File IO, results tables, a thread-parallel simulation runner and the
//! `psiv` command-line tool, built on [`psiv_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
